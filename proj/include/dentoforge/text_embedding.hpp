#pragma once

#include <cctype>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dentoforge/errors.hpp"
#include "dentoforge/rng.hpp"

namespace dentoforge::diffusion {

inline constexpr int kTextDim = 64;

// Hashed bag-of-tokens prompt encoding: each lowercased whitespace token is
// hashed into signed buckets, the sum is L2-normalized. Deterministic
// stand-in for a frozen text encoder.
struct TextEmbedding {
  Eigen::VectorXd vec;  // unit norm, kTextDim
  std::string prompt;
};

inline TextEmbedding embed_text(const std::string& prompt) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : prompt) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  if (tokens.empty()) throw ValidationError("empty prompt");

  Eigen::VectorXd v = Eigen::VectorXd::Zero(kTextDim);
  for (const std::string& tok : tokens) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tok) h = (h ^ static_cast<std::uint64_t>(c)) * 0x100000001b3ull;
    Rng rng(h);
    for (int i = 0; i < kTextDim; ++i) v[i] += rng.normal();
  }
  v.normalize();
  return {v, prompt};
}

}  // namespace dentoforge::diffusion
