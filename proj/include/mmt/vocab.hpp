#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmt {

// Token <-> index bijection with fixed reserved indices.
class Vocabulary {
 public:
  static constexpr int kEos = 0;
  static constexpr int kUnk = 1;
  static constexpr int kPad = 2;

  Vocabulary() {
    add("<eos>");
    add("<unk>");
    add("<pad>");
  }

  int add(const std::string& tok) {
    auto it = index_.find(tok);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(tok);
    index_.emplace(tok, id);
    return id;
  }

  int lookup(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size()))
      throw std::out_of_range("Vocabulary: index " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  std::vector<int> encode(const std::string& line) const {
    std::vector<int> ids;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) ids.push_back(lookup(tok));
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == kEos) break;
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  // Newline-delimited tokens; the three reserved entries form the header.
  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("Vocabulary: cannot write " + path);
    for (const auto& t : tokens_) os << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("Vocabulary: cannot read " + path);
    Vocabulary v;
    std::string line;
    int ln = 0;
    while (std::getline(is, line)) {
      if (ln < 3) {
        if (line != v.tokens_[static_cast<size_t>(ln)])
          throw std::runtime_error("Vocabulary: bad reserved header in " +
                                   path);
      } else {
        v.add(line);
      }
      ++ln;
    }
    if (ln < 3)
      throw std::runtime_error("Vocabulary: missing reserved header in " +
                               path);
    return v;
  }

  // FNV-1a over the token list, for checkpoint manifests.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& t : tokens_) {
      for (char c : t) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
      }
      h ^= '\n';
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mmt
