// Command-line workbench: data generation, training, translation,
// evaluation, attention dumps and gradient checking.
#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmt/attn_dump.hpp"
#include "mmt/bleu.hpp"
#include "mmt/corpus.hpp"
#include "mmt/gradcheck.hpp"
#include "mmt/train.hpp"

using namespace mmt;
namespace fs = std::filesystem;

namespace {

// Line-oriented key=value config; '#' starts a comment.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key=value");
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string()
                                    : s.substr(b, e - b + 1);
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return kv;
}

struct TrainSettings {
  // data
  std::string train_src, train_tgt, train_feats;
  std::string dev_src, dev_tgt, dev_feats;
  std::string out_dir = "run";
  // model
  ModelConfig model;
  // optimization
  TrainConfig opt;
};

void apply_config(TrainSettings& s, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "train_src") s.train_src = v;
    else if (k == "train_tgt") s.train_tgt = v;
    else if (k == "train_feats") s.train_feats = v;
    else if (k == "dev_src") s.dev_src = v;
    else if (k == "dev_tgt") s.dev_tgt = v;
    else if (k == "dev_feats") s.dev_feats = v;
    else if (k == "out_dir") s.out_dir = v;
    else if (k == "embed_dim") s.model.embed_dim = std::stoi(v);
    else if (k == "hidden") s.model.hidden = std::stoi(v);
    else if (k == "attn_dim") s.model.attn_dim = std::stoi(v);
    else if (k == "img_len") s.model.img_len = std::stoi(v);
    else if (k == "img_dim") s.model.img_dim = std::stoi(v);
    else if (k == "attention") s.model.img_attention = img_attn_from_string(v);
    else if (k == "gating") s.model.gating = (v == "1" || v == "true");
    else if (k == "doubling") s.model.doubling = (v == "1" || v == "true");
    else if (k == "grounding") s.model.grounding = (v == "1" || v == "true");
    else if (k == "grounding_hidden") s.model.grounding_hidden = std::stoi(v);
    else if (k == "local_window") s.model.local_window = std::stoi(v);
    else if (k == "batch_size") s.opt.batch_size = std::stoi(v);
    else if (k == "dropout") s.opt.dropout = std::stod(v);
    else if (k == "patience") s.opt.patience = std::stoi(v);
    else if (k == "max_epochs") s.opt.max_epochs = std::stoi(v);
    else if (k == "seed") s.opt.seed = std::stoull(v);
    else if (k == "n_samples") s.opt.n_samples = std::stoi(v);
    else if (k == "max_decode_len") s.opt.max_decode_len = std::stoi(v);
    else if (k == "adadelta_rho") s.opt.adadelta_rho = std::stod(v);
    else if (k == "adadelta_eps") s.opt.adadelta_eps = std::stod(v);
    else throw std::runtime_error("unknown config key: " + k);
  }
}

int cmd_gen_data(const SyntheticSpec& spec, const std::string& out_dir) {
  auto data = gen_synthetic(spec);
  fs::create_directories(out_dir);
  auto put = [&](const std::string& name, const SyntheticSplit& s) {
    write_lines(out_dir + "/" + name + ".src", s.src_lines);
    write_lines(out_dir + "/" + name + ".tgt", s.tgt_lines);
    s.pack.save(out_dir + "/" + name + ".feats");
    // planted ground truth, for later slot-accuracy analysis
    std::ofstream os(out_dir + "/" + name + ".planted");
    for (size_t i = 0; i < s.planted_cell.size(); ++i)
      os << s.planted_cell[i] << '\t' << s.planted_class[i] << '\n';
  };
  put("train", data.train);
  put("dev", data.dev);
  put("test", data.test);
  data.src_vocab.save(out_dir + "/src.vocab");
  data.tgt_vocab.save(out_dir + "/tgt.vocab");
  std::cout << "wrote " << spec.n_train << "/" << spec.n_dev << "/"
            << spec.n_test << " examples (L=" << spec.L()
            << ", D=" << spec.img_dim << ", K=" << spec.classes << ") to "
            << out_dir << "\n";
  return 0;
}

int cmd_train(const TrainSettings& s) {
  if (s.train_src.empty() || s.train_tgt.empty() || s.dev_src.empty() ||
      s.dev_tgt.empty())
    throw std::runtime_error(
        "train requires train_src, train_tgt, dev_src, dev_tgt");

  std::optional<FeaturePack> train_pack, dev_pack;
  if (!s.train_feats.empty()) train_pack = FeaturePack::load(s.train_feats);
  if (!s.dev_feats.empty()) dev_pack = FeaturePack::load(s.dev_feats);

  ModelConfig cfg = s.model;
  if (cfg.multimodal()) {
    if (!train_pack || !dev_pack)
      throw std::runtime_error(
          "image attention configured but train_feats/dev_feats missing");
    cfg.img_len = train_pack->L;
    cfg.img_dim = train_pack->D;
  }

  auto train_corpus = load_corpus(s.train_src, s.train_tgt,
                                  train_pack ? &*train_pack : nullptr);
  auto dev_corpus = encode_corpus(read_lines(s.dev_src),
                                  read_lines(s.dev_tgt),
                                  train_corpus.src_vocab,
                                  train_corpus.tgt_vocab,
                                  dev_pack.has_value());
  cfg.src_vocab = train_corpus.src_vocab.size();
  cfg.tgt_vocab = train_corpus.tgt_vocab.size();

  Model<float> m(cfg);
  RngState rng(s.opt.seed);
  m.init(rng);
  std::cout << "model: " << m.param_count() << " parameters, attention="
            << to_string(cfg.img_attention) << "\n";

  fs::create_directories(s.out_dir);
  std::ofstream log(s.out_dir + "/train.log");
  auto res = train(m, train_corpus, train_pack ? &*train_pack : nullptr,
                   dev_corpus, dev_pack ? &*dev_pack : nullptr, s.opt, &log);

  train_corpus.src_vocab.save(s.out_dir + "/src.vocab");
  train_corpus.tgt_vocab.save(s.out_dir + "/tgt.vocab");
  checkpoint::save(res.best, s.out_dir + "/model.ckpt",
                   train_corpus.src_vocab.hash(),
                   train_corpus.tgt_vocab.hash());
  std::cout << "best dev BLEU " << res.best_bleu << " at epoch "
            << res.best_epoch << " (stopped after " << res.stopped_epoch
            << "); checkpoint in " << s.out_dir << "\n";
  return 0;
}

struct LoadedModel {
  Model<float> model;
  Vocabulary src_vocab, tgt_vocab;
};

LoadedModel load_model(const std::string& ckpt_path) {
  checkpoint::LoadedMeta meta;
  auto m = checkpoint::load<float>(ckpt_path, &meta);
  auto dir = fs::path(ckpt_path).parent_path();
  auto sv = Vocabulary::load((dir / "src.vocab").string());
  auto tv = Vocabulary::load((dir / "tgt.vocab").string());
  if (sv.hash() != meta.src_vocab_hash || tv.hash() != meta.tgt_vocab_hash)
    throw std::runtime_error(
        "vocabulary files do not match the checkpoint's vocab hashes");
  return {std::move(m), std::move(sv), std::move(tv)};
}

int cmd_translate(const std::string& ckpt, const std::string& src_path,
                  const std::string& feats_path, const std::string& out_path,
                  int max_len) {
  auto lm = load_model(ckpt);
  std::optional<FeaturePack> pack;
  if (!feats_path.empty()) pack = FeaturePack::load(feats_path);
  if (lm.model.cfg.multimodal() && !pack)
    throw std::runtime_error("model uses image attention; --features required");

  auto lines = read_lines(src_path);
  if (pack && static_cast<size_t>(pack->count) < lines.size())
    throw std::runtime_error("feature pack has fewer examples than input");

  std::vector<std::string> out;
  for (size_t i = 0; i < lines.size(); ++i) {
    std::optional<Tensor<float>> feat;
    if (lm.model.cfg.multimodal())
      feat = pack->features<float>(static_cast<int>(i));
    auto res = greedy_decode(lm.model, lm.src_vocab.encode(lines[i]),
                             feat ? &*feat : nullptr, max_len);
    out.push_back(lm.tgt_vocab.decode(res.tokens));
  }
  if (out_path.empty() || out_path == "-")
    for (const auto& l : out) std::cout << l << "\n";
  else
    write_lines(out_path, out);
  return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path) {
  auto r = corpus_bleu4(read_lines(hyp_path), read_lines(ref_path));
  std::cout << "BLEU = " << r.score << "\n"
            << "precisions = " << r.precision[0] << " / " << r.precision[1]
            << " / " << r.precision[2] << " / " << r.precision[3] << "\n"
            << "brevity penalty = " << r.brevity_penalty << " (c="
            << r.candidate_length << ", r=" << r.reference_length << ")\n";
  return 0;
}

int cmd_attn_dump(const std::string& ckpt, const std::string& sentence,
                  const std::string& feats_path, int index,
                  const std::string& out_dir, int grid_side, int max_len) {
  auto lm = load_model(ckpt);
  std::optional<Tensor<float>> feat;
  if (lm.model.cfg.multimodal()) {
    if (feats_path.empty())
      throw std::runtime_error("model uses image attention; --features required");
    auto pack = FeaturePack::load(feats_path);
    feat = pack.features<float>(index);
  }
  auto res = greedy_decode(lm.model, lm.src_vocab.encode(sentence),
                           feat ? &*feat : nullptr, max_len);
  if (grid_side <= 0)
    grid_side = static_cast<int>(std::lround(
        std::sqrt(static_cast<double>(lm.model.cfg.img_len))));
  dump_attention(res.trace, grid_side, out_dir);
  std::cout << lm.tgt_vocab.decode(res.tokens) << "\n"
            << res.trace.size() << " steps dumped to " << out_dir << "\n";
  return 0;
}

int cmd_gradcheck(ModelConfig cfg, int src_len, int tgt_len,
                  std::uint64_t seed) {
  Model<double> m(cfg);
  RngState rng(seed);
  m.init(rng);

  std::vector<int> src, tgt;
  for (int i = 0; i < src_len; ++i)
    src.push_back(3 + static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(cfg.src_vocab - 3))));
  for (int i = 0; i < tgt_len; ++i)
    tgt.push_back(3 + static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(cfg.tgt_vocab - 3))));
  Tensor<double> feat({cfg.img_len, cfg.img_dim});
  for (auto& v : feat.data) v = rng.normal() * 0.5;
  const Tensor<double>* fp = cfg.multimodal() ? &feat : nullptr;

  m.reset_grads();
  {
    Tape<double> tape;
    Binder<double> B(tape);
    DropoutPack<double> drop;
    auto sl = nll_graph(tape, B, m, src, tgt, fp, drop);
    tape.backward(sl.loss);
  }
  auto res = grad_check(
      [&]() {
        Tape<double> tape;
        Binder<double> B(tape);
        DropoutPack<double> drop;
        return nll_graph(tape, B, m, src, tgt, fp, drop).nll;
      },
      m.params);
  bool ok = res.finite && res.max_rel_error <= 1e-4;
  std::cout << "max relative error = " << res.max_rel_error << " ("
            << res.worst_param << ")\n"
            << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-based translation workbench"};
  app.require_subcommand(1);

  // ---- gen-data -----------------------------------------------------------
  SyntheticSpec spec;
  std::string gen_out = "data";
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  gen->add_option("--grid-side", spec.grid_side, "image grid side g (L = g^2)");
  gen->add_option("--img-dim", spec.img_dim, "feature dimension per cell");
  gen->add_option("--classes", spec.classes, "number of planted classes");
  gen->add_option("--alphabet", spec.src_alphabet, "ordinary token types");
  gen->add_option("--sent-len", spec.sent_len, "sentence length");
  gen->add_option("--obj-pos", spec.obj_pos, "ambiguous slot position");
  gen->add_option("--noise-std", spec.noise_std, "feature noise stddev");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--train", spec.n_train, "training examples");
  gen->add_option("--dev", spec.n_dev, "dev examples");
  gen->add_option("--test", spec.n_test, "test examples");
  gen->add_option("--out", gen_out, "output directory");

  // ---- train --------------------------------------------------------------
  TrainSettings ts;
  std::string config_path;
  std::string attn_flag;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--train-src", ts.train_src, "training source file");
  tr->add_option("--train-tgt", ts.train_tgt, "training target file");
  tr->add_option("--train-feats", ts.train_feats, "training feature pack");
  tr->add_option("--dev-src", ts.dev_src, "dev source file");
  tr->add_option("--dev-tgt", ts.dev_tgt, "dev target file");
  tr->add_option("--dev-feats", ts.dev_feats, "dev feature pack");
  tr->add_option("--out", ts.out_dir, "output directory");
  tr->add_option("--attention", attn_flag, "none|soft|hard|local");
  tr->add_option("--embed-dim", ts.model.embed_dim, "embedding size");
  tr->add_option("--hidden", ts.model.hidden, "hidden size");
  tr->add_option("--attn-dim", ts.model.attn_dim, "attention size (0=hidden)");
  tr->add_flag("--gating", ts.model.gating, "gate the image context");
  tr->add_flag("--doubling", ts.model.doubling, "doubled image projections");
  tr->add_flag("--grounding", ts.model.grounding, "ground image annotations");
  tr->add_option("--local-window", ts.model.local_window,
                 "local attention half-width D (0=default)");
  tr->add_option("--batch-size", ts.opt.batch_size, "batch size");
  tr->add_option("--dropout", ts.opt.dropout, "dropout probability");
  tr->add_option("--patience", ts.opt.patience, "early-stopping patience");
  tr->add_option("--max-epochs", ts.opt.max_epochs, "epoch cap");
  tr->add_option("--seed", ts.opt.seed, "training seed");
  tr->add_option("--n-samples", ts.opt.n_samples,
                 "Monte Carlo samples per sentence (hard attention)");
  tr->add_option("--max-decode-len", ts.opt.max_decode_len,
                 "greedy decode cap for dev BLEU");

  // ---- translate ----------------------------------------------------------
  std::string t_ckpt, t_src, t_feats, t_out;
  int t_maxlen = 50;
  auto* trn = app.add_subcommand("translate", "greedy-decode a source file");
  trn->add_option("--checkpoint", t_ckpt, "model checkpoint")->required();
  trn->add_option("--src", t_src, "source sentences, one per line")->required();
  trn->add_option("--features", t_feats, "feature pack aligned to --src");
  trn->add_option("--out", t_out, "output file ('-' = stdout)");
  trn->add_option("--max-len", t_maxlen, "decode length cap");

  // ---- evaluate -----------------------------------------------------------
  std::string e_hyp, e_ref;
  auto* ev = app.add_subcommand("evaluate", "corpus BLEU-4 of hyp vs ref");
  ev->add_option("--hyp", e_hyp, "hypothesis file")->required();
  ev->add_option("--ref", e_ref, "reference file")->required();

  // ---- attn-dump ----------------------------------------------------------
  std::string a_ckpt, a_sentence, a_feats, a_out = "attn";
  int a_index = 0, a_grid = 0, a_maxlen = 50;
  auto* ad = app.add_subcommand("attn-dump",
                                "decode one sentence and dump attention maps");
  ad->add_option("--checkpoint", a_ckpt, "model checkpoint")->required();
  ad->add_option("--sentence", a_sentence, "source sentence text")->required();
  ad->add_option("--features", a_feats, "feature pack");
  ad->add_option("--index", a_index, "example index within the pack");
  ad->add_option("--out", a_out, "output directory");
  ad->add_option("--grid-side", a_grid, "PGM grid side (0 = sqrt(L))");
  ad->add_option("--max-len", a_maxlen, "decode length cap");

  // ---- gradcheck ----------------------------------------------------------
  ModelConfig gc;
  gc.src_vocab = 10;
  gc.tgt_vocab = 10;
  gc.embed_dim = 6;
  gc.hidden = 8;
  gc.img_len = 4;
  gc.img_dim = 8;
  std::string gc_attn = "soft";
  int gc_src_len = 4, gc_tgt_len = 2;
  std::uint64_t gc_seed = 1;
  auto* gck = app.add_subcommand("gradcheck",
                                 "finite-difference check of a full loss");
  gck->add_option("--hidden", gc.hidden, "hidden size");
  gck->add_option("--embed-dim", gc.embed_dim, "embedding size");
  gck->add_option("--vocab", gc.src_vocab, "vocabulary size (both sides)");
  gck->add_option("--img-len", gc.img_len, "image locations L");
  gck->add_option("--img-dim", gc.img_dim, "image feature dimension");
  gck->add_option("--attention", gc_attn, "none|soft|hard|local");
  gck->add_flag("--gating", gc.gating, "gate the image context");
  gck->add_flag("--doubling", gc.doubling, "doubled image projections");
  gck->add_flag("--grounding", gc.grounding, "ground image annotations");
  gck->add_option("--grounding-hidden", gc.grounding_hidden,
                  "grounding hidden width");
  gck->add_option("--local-window", gc.local_window,
                  "local attention half-width D (0=default)");
  gck->add_option("--src-len", gc_src_len, "source length M");
  gck->add_option("--tgt-len", gc_tgt_len, "target length");
  gck->add_option("--seed", gc_seed, "init seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(spec, gen_out);
    if (*tr) {
      if (!config_path.empty()) {
        // config first, then re-parse so flags take precedence
        TrainSettings base;
        apply_config(base, read_config(config_path));
        auto override_if = [&](auto& dst, const auto& flag_val,
                               const std::string& name) {
          if (tr->count(name)) dst = flag_val;
        };
        TrainSettings merged = base;
        override_if(merged.train_src, ts.train_src, "--train-src");
        override_if(merged.train_tgt, ts.train_tgt, "--train-tgt");
        override_if(merged.train_feats, ts.train_feats, "--train-feats");
        override_if(merged.dev_src, ts.dev_src, "--dev-src");
        override_if(merged.dev_tgt, ts.dev_tgt, "--dev-tgt");
        override_if(merged.dev_feats, ts.dev_feats, "--dev-feats");
        override_if(merged.out_dir, ts.out_dir, "--out");
        override_if(merged.model.embed_dim, ts.model.embed_dim, "--embed-dim");
        override_if(merged.model.hidden, ts.model.hidden, "--hidden");
        override_if(merged.model.attn_dim, ts.model.attn_dim, "--attn-dim");
        override_if(merged.model.gating, ts.model.gating, "--gating");
        override_if(merged.model.doubling, ts.model.doubling, "--doubling");
        override_if(merged.model.grounding, ts.model.grounding, "--grounding");
        override_if(merged.model.local_window, ts.model.local_window,
                    "--local-window");
        override_if(merged.opt.batch_size, ts.opt.batch_size, "--batch-size");
        override_if(merged.opt.dropout, ts.opt.dropout, "--dropout");
        override_if(merged.opt.patience, ts.opt.patience, "--patience");
        override_if(merged.opt.max_epochs, ts.opt.max_epochs, "--max-epochs");
        override_if(merged.opt.seed, ts.opt.seed, "--seed");
        override_if(merged.opt.n_samples, ts.opt.n_samples, "--n-samples");
        override_if(merged.opt.max_decode_len, ts.opt.max_decode_len,
                    "--max-decode-len");
        ts = merged;
      }
      if (tr->count("--attention"))
        ts.model.img_attention = img_attn_from_string(attn_flag);
      return cmd_train(ts);
    }
    if (*trn) return cmd_translate(t_ckpt, t_src, t_feats, t_out, t_maxlen);
    if (*ev) return cmd_evaluate(e_hyp, e_ref);
    if (*ad)
      return cmd_attn_dump(a_ckpt, a_sentence, a_feats, a_index, a_out, a_grid,
                           a_maxlen);
    if (*gck) {
      gc.tgt_vocab = gc.src_vocab;
      gc.img_attention = img_attn_from_string(gc_attn);
      return cmd_gradcheck(gc, gc_src_len, gc_tgt_len, gc_seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
