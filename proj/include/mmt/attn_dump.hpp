#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "mmt/decoder.hpp"

namespace mmt {

// Writes the per-step image-attention weights of a decode trace: one CSV
// row of L weights per step with beta_t as a trailing column, plus one
// max-normalized 8-bit PGM (g x g) per step when L is a perfect square.
template <typename Real>
void dump_attention(const DecodeTrace<Real>& trace, int grid_side,
                    const std::string& out_dir,
                    std::ostream& warnings = std::cerr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  bool pgm_ok = true;
  if (!trace.empty()) {
    int L = static_cast<int>(trace[0].alpha_img.size());
    if (grid_side * grid_side != L) {
      warnings << "dump_attention: L=" << L
               << " is not grid " << grid_side << "x" << grid_side
               << "; writing CSV only\n";
      pgm_ok = false;
    }
  }

  std::ofstream csv(out_dir + "/alpha_img.csv");
  if (!csv)
    throw std::runtime_error("dump_attention: cannot write CSV in " + out_dir);
  for (size_t t = 0; t < trace.size(); ++t) {
    const auto& row = trace[t];
    for (size_t i = 0; i < row.alpha_img.size(); ++i) {
      if (i) csv << ',';
      csv << static_cast<double>(row.alpha_img[i]);
    }
    csv << ',' << static_cast<double>(row.beta) << '\n';

    if (!pgm_ok || row.alpha_img.empty()) continue;
    Real mx = row.alpha_img[0];
    for (Real v : row.alpha_img) mx = std::max(mx, v);
    char name[32];
    std::snprintf(name, sizeof(name), "/step_%03zu.pgm", t);
    std::ofstream pgm(out_dir + name, std::ios::binary);
    pgm << "P5\n" << grid_side << " " << grid_side << "\n255\n";
    for (Real v : row.alpha_img) {
      int px = mx > Real(0)
                   ? static_cast<int>(std::lround(255.0 *
                                                  static_cast<double>(v) /
                                                  static_cast<double>(mx)))
                   : 0;
      pgm.put(static_cast<char>(px));
    }
  }
}

}  // namespace mmt
