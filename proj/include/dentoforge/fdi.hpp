#pragma once

#include <string>

#include "dentoforge/errors.hpp"

namespace dentoforge::jawgraph {

enum class JawSide { Upper, Lower };

// FDI two-digit notation: first digit is the quadrant (1 upper right,
// 2 upper left, 3 lower left, 4 lower right), second the position from the
// midline (1 central incisor .. 8 third molar).
namespace fdi {

inline bool is_valid(int code) {
  const int q = code / 10;
  const int p = code % 10;
  return q >= 1 && q <= 4 && p >= 1 && p <= 8;
}

inline int quadrant(int code) { return code / 10; }
inline int position(int code) { return code % 10; }

inline bool belongs_to(int code, JawSide side) {
  if (!is_valid(code)) return false;
  const int q = quadrant(code);
  return side == JawSide::Upper ? (q == 1 || q == 2) : (q == 3 || q == 4);
}

inline void require_valid(int code, JawSide side) {
  if (!is_valid(code) || !belongs_to(code, side)) {
    throw ValidationError("invalid FDI code " + std::to_string(code));
  }
}

// Rank along the dental arch. Upper: 18,17,...,11,21,...,28 maps to
// 0..15; lower analogously starting from the patient's right (48..41,
// 31..38).
inline int arch_rank(int code, JawSide side) {
  require_valid(code, side);
  const int q = quadrant(code);
  const int p = position(code);
  const bool leading = (side == JawSide::Upper) ? (q == 1) : (q == 4);
  return leading ? (8 - p) : (7 + p);
}

// Contralateral partner: 11<->21, 36<->46, etc.
inline int mirror(int code) {
  const int q = quadrant(code);
  const int p = position(code);
  const int mq = (q == 1) ? 2 : (q == 2) ? 1 : (q == 3) ? 4 : 3;
  return mq * 10 + p;
}

// Dense class index in [0, 32) used as the category vocabulary.
inline int category_index(int code) {
  return (quadrant(code) - 1) * 8 + (position(code) - 1);
}

}  // namespace fdi
}  // namespace dentoforge::jawgraph
