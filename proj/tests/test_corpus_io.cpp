#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmt/attn_dump.hpp"
#include "mmt/corpus.hpp"

using namespace mmt;
namespace fs = std::filesystem;

TEST_CASE("feature pack round-trips bit-exactly", "[corpus]") {
  FeaturePack p;
  p.resize(3, 4, 2);
  RngState rng(81);
  for (auto& v : p.data) v = static_cast<float>(rng.normal());
  p.data[5] = -0.0f;
  p.data[7] = 1.0e-38f;  // tiny but normal value survives

  auto path = (fs::temp_directory_path() / "mmt_pack_test.bin").string();
  p.save(path);
  auto q = FeaturePack::load(path);
  CHECK(q.count == 3);
  CHECK(q.L == 4);
  CHECK(q.D == 2);
  REQUIRE(q.data.size() == p.data.size());
  for (size_t i = 0; i < p.data.size(); ++i) {
    // compare the bit patterns, not the float values
    std::uint32_t a, b;
    std::memcpy(&a, &p.data[i], 4);
    std::memcpy(&b, &q.data[i], 4);
    CHECK(a == b);
  }
  // example pointers address disjoint L*D blocks
  CHECK(p.example(1) - p.example(0) == 8);
  // typed view matches the raw data
  auto t = p.features<double>(2);
  CHECK(t.shape == std::vector<int>({4, 2}));
  CHECK(t.data[0] == static_cast<double>(p.example(2)[0]));
  CHECK_THROWS_AS(p.features<double>(3), std::out_of_range);

  {
    std::ofstream os(path, std::ios::binary);
    os.write("XXXX", 4);
  }
  CHECK_THROWS_AS(FeaturePack::load(path), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("load_corpus builds vocab and rejects misaligned files",
          "[corpus]") {
  auto dir = fs::temp_directory_path() / "mmt_corpus_test";
  fs::create_directories(dir);
  auto sp = (dir / "s.txt").string(), tp = (dir / "t.txt").string();
  write_lines(sp, {"ein hund", "eine katze springt"});
  write_lines(tp, {"a dog", "a cat jumps"});

  auto c = load_corpus(sp, tp);
  REQUIRE(c.size() == 2);
  CHECK(c.src[0].size() == 2);
  CHECK(c.tgt[1].size() == 3);
  CHECK(c.feature_index.empty());
  // every token above the reserved ids, shared across lines
  CHECK(c.tgt[0][0] == c.tgt[1][0]);  // "a"
  for (int id : c.src[0]) CHECK(id >= 3);

  // mismatch error names both counts
  write_lines(tp, {"a dog"});
  try {
    load_corpus(sp, tp);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find('2') != std::string::npos);
    CHECK(msg.find('1') != std::string::npos);
  }

  // feature pack with too few examples is rejected
  write_lines(tp, {"a dog", "a cat jumps"});
  FeaturePack pack;
  pack.resize(1, 2, 2);
  CHECK_THROWS_AS(load_corpus(sp, tp, &pack), std::runtime_error);
  pack.resize(2, 2, 2);
  auto cf = load_corpus(sp, tp, &pack);
  CHECK(cf.feature_index == std::vector<int>({0, 1}));
  fs::remove_all(dir);
}

TEST_CASE("encode_corpus reuses existing vocabularies", "[corpus]") {
  Vocabulary sv, tv;
  sv.add("ein");
  sv.add("hund");
  tv.add("a");
  tv.add("dog");
  auto c = encode_corpus({"ein hund", "ein wolf"}, {"a dog", "a wolf"}, sv, tv,
                         false);
  CHECK(c.src[0] == std::vector<int>({sv.lookup("ein"), sv.lookup("hund")}));
  // unseen tokens map to <unk>, vocabularies stay frozen
  CHECK(c.src[1][1] == Vocabulary::kUnk);
  CHECK(c.tgt[1][1] == Vocabulary::kUnk);
  CHECK(c.src_vocab.size() == sv.size());
}

TEST_CASE("synthetic task plants exactly one signature cell", "[corpus]") {
  SyntheticSpec spec;
  spec.n_train = 50;
  spec.n_dev = 10;
  spec.n_test = 10;
  spec.seed = 3;
  auto d = gen_synthetic(spec);

  CHECK(d.src_vocab.size() == 3 + spec.src_alphabet + 1);  // + OBJ
  CHECK(d.tgt_vocab.size() == 3 + spec.src_alphabet + spec.classes);

  REQUIRE(d.train.src_lines.size() == 50);
  REQUIRE(d.train.pack.count == 50);
  CHECK(d.train.pack.L == 16);
  CHECK(d.train.pack.D == 8);

  for (int i = 0; i < 50; ++i) {
    int cell = d.train.planted_cell[static_cast<size_t>(i)];
    int cls = d.train.planted_class[static_cast<size_t>(i)];
    REQUIRE(cell >= 0);
    REQUIRE(cell < 16);
    REQUIRE(cls >= 0);
    REQUIRE(cls < 4);

    // OBJ sits at the fixed slot; its translation is the class token
    std::istringstream ss(d.train.src_lines[static_cast<size_t>(i)]);
    std::istringstream tt(d.train.tgt_lines[static_cast<size_t>(i)]);
    std::string sw, tw;
    for (int t = 0; t <= spec.obj_pos; ++t) {
      ss >> sw;
      tt >> tw;
    }
    CHECK(sw == "OBJ");
    CHECK(tw == "c" + std::to_string(cls));

    // non-OBJ slots follow the fixed bijection s_i -> t_i
    std::istringstream ss2(d.train.src_lines[static_cast<size_t>(i)]);
    std::istringstream tt2(d.train.tgt_lines[static_cast<size_t>(i)]);
    for (int t = 0; t < spec.sent_len; ++t) {
      ss2 >> sw;
      tt2 >> tw;
      if (t == spec.obj_pos) continue;
      CHECK(tw == "t" + sw.substr(1));
    }

    // the planted cell is exactly the unit basis vector e_cls...
    const float* feat = d.train.pack.example(i);
    const float* cv = feat + cell * 8;
    for (int k = 0; k < 8; ++k)
      CHECK(cv[k] == (k == cls ? 1.0f : 0.0f));
    // ...and is the only cell with unit norm (noise is tiny)
    for (int l = 0; l < 16; ++l) {
      if (l == cell) continue;
      double norm = 0;
      for (int k = 0; k < 8; ++k)
        norm += static_cast<double>(feat[l * 8 + k]) * feat[l * 8 + k];
      CHECK(norm < 0.5);
    }
  }
}

TEST_CASE("synthetic classes and cells are near-uniform at volume",
          "[corpus]") {
  SyntheticSpec spec;
  spec.n_train = 10000;
  spec.n_dev = 1;
  spec.n_test = 1;
  spec.seed = 7;
  auto d = gen_synthetic(spec);
  std::vector<int> cls_counts(4, 0), cell_counts(16, 0);
  for (int i = 0; i < 10000; ++i) {
    cls_counts[static_cast<size_t>(d.train.planted_class[static_cast<size_t>(i)])]++;
    cell_counts[static_cast<size_t>(d.train.planted_cell[static_cast<size_t>(i)])]++;
  }
  for (int c : cls_counts) {
    CHECK(c > 10000 / 4 - 200);  // within 2% of uniform
    CHECK(c < 10000 / 4 + 200);
  }
  for (int c : cell_counts) {
    CHECK(c > 10000 / 16 - 200);
    CHECK(c < 10000 / 16 + 200);
  }
  // identical seeds reproduce the corpus exactly
  auto d2 = gen_synthetic(spec);
  CHECK(d2.train.src_lines == d.train.src_lines);
  CHECK(d2.train.pack.data == d.train.pack.data);
}

TEST_CASE("synthetic spec validation", "[corpus]") {
  SyntheticSpec bad;
  bad.classes = 20;  // > L = 16
  CHECK_THROWS_AS(gen_synthetic(bad), std::invalid_argument);
  SyntheticSpec bad2;
  bad2.img_dim = 2;  // < K = 4
  CHECK_THROWS_AS(gen_synthetic(bad2), std::invalid_argument);
  SyntheticSpec bad3;
  bad3.obj_pos = 6;  // == sent_len
  CHECK_THROWS_AS(gen_synthetic(bad3), std::invalid_argument);
}

TEST_CASE("attention dump writes CSV and grid PGMs", "[corpus]") {
  DecodeTrace<float> trace;
  for (int t = 0; t < 2; ++t) {
    TraceRow<float> row;
    row.alpha_img.assign(4, 0.1f);
    row.alpha_img[static_cast<size_t>(t)] = 0.7f;
    row.beta = 0.25f * (t + 1);
    trace.push_back(row);
  }
  auto dir = (fs::temp_directory_path() / "mmt_dump_test").string();
  fs::remove_all(dir);
  dump_attention(trace, 2, dir);

  auto lines = read_lines(dir + "/alpha_img.csv");
  REQUIRE(lines.size() == 2);
  // L weights plus the trailing beta column
  CHECK(lines[0] == "0.7,0.1,0.1,0.1,0.25");
  CHECK(lines[1] == "0.1,0.7,0.1,0.1,0.5");

  std::ifstream pgm(dir + "/step_000.pgm", std::ios::binary);
  REQUIRE(pgm.good());
  std::string magic, w, h, maxv;
  pgm >> magic >> w >> h >> maxv;
  CHECK(magic == "P5");
  CHECK(w == "2");
  CHECK(h == "2");
  CHECK(maxv == "255");
  pgm.get();  // single whitespace after header
  unsigned char px[4];
  pgm.read(reinterpret_cast<char*>(px), 4);
  CHECK(static_cast<int>(px[0]) == 255);  // max weight -> full white
  CHECK(static_cast<int>(px[1]) == std::lround(255.0 * 0.1f / 0.7f));

  // non-square L: CSV still written, a warning goes to the stream, no PGM
  auto dir2 = (fs::temp_directory_path() / "mmt_dump_test2").string();
  fs::remove_all(dir2);
  TraceRow<float> odd;
  odd.alpha_img.assign(3, 0.5f);
  std::ostringstream warn;
  dump_attention(DecodeTrace<float>{odd}, 2, dir2, warn);
  CHECK(fs::exists(dir2 + "/alpha_img.csv"));
  CHECK(!fs::exists(dir2 + "/step_000.pgm"));
  CHECK(warn.str().find("CSV only") != std::string::npos);

  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("write_lines then read_lines is the identity", "[corpus]") {
  auto path = (fs::temp_directory_path() / "mmt_lines_test.txt").string();
  std::vector<std::string> lines{"one two", "", "three"};
  write_lines(path, lines);
  CHECK(read_lines(path) == lines);
  CHECK_THROWS_AS(read_lines(path + ".missing"), std::runtime_error);
  fs::remove(path);
}
