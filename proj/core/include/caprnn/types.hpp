#pragma once

#include <cstdint>

namespace caprnn {

/// Integer token identifier. Ids 0..2 are reserved for the special tokens
/// below; real words start at id 3.
using TokenId = std::int32_t;

inline constexpr TokenId kStartId = 0;
inline constexpr TokenId kEndId = 1;
inline constexpr TokenId kUnknownId = 2;
inline constexpr std::size_t kSpecialTokenCount = 3;

enum class Split { train, val, test };

}  // namespace caprnn
