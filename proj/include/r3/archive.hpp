// SPDX-License-Identifier: Apache-2.0
//
// Single-file avatar archive.
//
// Layout: "R3AV", u32 version, u32 section count, then sections of the form
// magic[4], u32 payload bytes, payload. Every payload begins with a u32 section
// version. Sections:
//   R3MD  metadata JSON (bbox, time range, codebook config, decoder limits)
//   R3SK  skeleton JSON
//   R3PT  training poses, float64
//   R3CB  u32 scale count, per scale {u32 H, u32 W, u32 T, u32 C, 6 planes}
//   R3GD  u32 D, u32 W, u32 in_dim, u32 out_dim, per layer weights then biases
//   R3SH  u32 count, u32 degree, coefficient block
//   R3XC  u32 count, xyz triples
//   R3OP  u32 count, opacity logit offsets
//   R3BW  u32 count, u32 joints, base logits, refinement network as in R3GD
//   R3OS  optional Adam state: u64 step, u32 slots, per slot {u32 rows, u32 cols, m, v}
// Reals are little-endian float32 except R3PT. Unknown, duplicate or missing
// sections and any version mismatch raise FormatError.
#pragma once

#include "r3/avatar.hpp"
#include "r3/trainer.hpp"

#include <filesystem>
#include <string>
#include <type_traits>

namespace r3 {

inline constexpr std::uint32_t kArchiveVersion = 1;

template <typename Scalar>
std::string serialize_avatar(const CanonicalAvatar<Scalar>& avatar,
                             const std::type_identity_t<OptimizerState<Scalar>>* optimizer = nullptr);

/// `optimizer` receives the R3OS section when present and is cleared otherwise.
template <typename Scalar>
CanonicalAvatar<Scalar> deserialize_avatar(const std::string& bytes, const std::string& context,
                                           std::type_identity_t<OptimizerState<Scalar>>* optimizer = nullptr);

/// Writes to a sibling temporary file and renames it into place.
template <typename Scalar>
void save_avatar(const std::filesystem::path& path, const CanonicalAvatar<Scalar>& avatar,
                 const std::type_identity_t<OptimizerState<Scalar>>* optimizer = nullptr);

template <typename Scalar>
CanonicalAvatar<Scalar> load_avatar(const std::filesystem::path& path,
                                    std::type_identity_t<OptimizerState<Scalar>>* optimizer = nullptr);

} // namespace r3
