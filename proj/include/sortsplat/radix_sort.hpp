// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <type_traits>
#include <vector>

namespace sortsplat {

/// Maps a float to an unsigned integer with the same total order
/// (negative values flip all bits, positives flip the sign bit).
inline std::uint32_t
orderable_float_bits(float f) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    return (u & 0x80000000u) ? ~u : (u | 0x80000000u);
}

inline float
float_from_orderable_bits(std::uint32_t u) {
    u = (u & 0x80000000u) ? (u & 0x7fffffffu) : ~u;
    return std::bit_cast<float>(u);
}

/// Stable LSD radix sort of (key, value) pairs, 8 bits per pass. Only the
/// passes covering `significantBits` low key bits run.
template <typename Key, typename Value>
void
radix_sort_pairs(std::vector<Key> &keys, std::vector<Value> &values,
                 int significantBits = int(sizeof(Key) * 8)) {
    static_assert(std::is_unsigned_v<Key>);
    const std::size_t n = keys.size();
    if (n < 2) return;

    std::vector<Key> keysAlt(n);
    std::vector<Value> valuesAlt(n);
    const int passes = (significantBits + 7) / 8;

    for (int pass = 0; pass < passes; ++pass) {
        const int shift = pass * 8;
        std::array<std::size_t, 257> offsets{};
        for (std::size_t i = 0; i < n; ++i) ++offsets[((keys[i] >> shift) & 0xffu) + 1];
        // all keys share this digit: nothing to reorder
        bool trivial = false;
        for (int d = 1; d <= 256; ++d) {
            if (offsets[d] == n) {
                trivial = true;
                break;
            }
        }
        if (trivial) continue;
        for (int d = 1; d <= 256; ++d) offsets[d] += offsets[d - 1];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t dst = offsets[(keys[i] >> shift) & 0xffu]++;
            keysAlt[dst]          = keys[i];
            valuesAlt[dst]        = values[i];
        }
        keys.swap(keysAlt);
        values.swap(valuesAlt);
    }
}

} // namespace sortsplat
