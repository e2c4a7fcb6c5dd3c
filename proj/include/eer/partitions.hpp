#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace eer {

using i64 = std::int64_t;

// Set partitions of {0..n-1} in restricted-growth-string form: code[t] is the
// block of element t, blocks numbered by first appearance, so code[0] == 0
// and code[t] <= 1 + max(code[0..t-1]).

using PartitionCode = std::vector<int>;

inline constexpr int kBellMax = 20;  // bell(20) is the last value below 2^63

inline std::uint64_t bell(int n) {
  if (n < 0) throw std::invalid_argument("bell: negative n");
  if (n > kBellMax) throw std::overflow_error("bell: n exceeds 64-bit range");
  // Bell triangle; row r starts with the last element of row r-1.
  std::vector<std::uint64_t> row{1};
  for (int r = 1; r <= n; ++r) {
    std::vector<std::uint64_t> next{row.back()};
    for (std::uint64_t v : row) next.push_back(next.back() + v);
    row = std::move(next);
  }
  return row.front();
}

inline bool is_valid_rgs(std::span<const int> code) {
  int hi = -1;
  for (int c : code) {
    if (c < 0 || c > hi + 1) return false;
    hi = std::max(hi, c);
  }
  return !code.empty();
}

// All partitions of an n-set in lexicographic code order.
inline std::vector<PartitionCode> enumerate_partitions(int n) {
  if (n < 1 || n > 12) throw std::invalid_argument("enumerate_partitions: n out of range");
  std::vector<PartitionCode> out;
  PartitionCode a(n, 0);
  for (;;) {
    out.push_back(a);
    int t = n - 1;
    while (t > 0) {
      int hi = 0;
      for (int u = 0; u < t; ++u) hi = std::max(hi, a[u]);
      if (a[t] <= hi) break;
      --t;
    }
    if (t == 0) return out;
    ++a[t];
    std::fill(a.begin() + t + 1, a.end(), 0);
  }
}

inline PartitionCode partition_of(std::span<const i64> tuple) {
  PartitionCode code;
  code.reserve(tuple.size());
  std::map<i64, int> label;
  for (i64 v : tuple) {
    auto [it, fresh] = label.try_emplace(v, (int)label.size());
    (void)fresh;
    code.push_back(it->second);
  }
  return code;
}

namespace detail {

// Number of RGS suffixes of length t when the running block count is m+1.
inline std::uint64_t rgs_completions(int t, int m) {
  static constexpr int kCap = kBellMax + 1;
  static const auto table = [] {
    std::array<std::array<std::uint64_t, kCap + 1>, kCap + 1> f{};
    for (int mm = 0; mm <= kCap; ++mm) f[0][mm] = 1;
    for (int tt = 1; tt <= kCap; ++tt)
      for (int mm = kCap - 1; mm >= 0; --mm)
        f[tt][mm] = (std::uint64_t)(mm + 1) * f[tt - 1][mm] + f[tt - 1][mm + 1];
    return f;
  }();
  return table[t][m];
}

}  // namespace detail

// Rank within enumerate_partitions order; inverse-consistent by construction.
inline std::uint64_t partition_index(const PartitionCode& code) {
  if (!is_valid_rgs(code)) throw std::invalid_argument("partition_index: not a canonical code");
  if ((int)code.size() > kBellMax) throw std::invalid_argument("partition_index: tuple too long");
  int n = (int)code.size();
  std::uint64_t rank = 0;
  int hi = 0;
  for (int t = 1; t < n; ++t) {
    for (int c = 0; c < code[t]; ++c)
      rank += detail::rgs_completions(n - 1 - t, std::max(hi, c));
    hi = std::max(hi, code[t]);
  }
  return rank;
}

}  // namespace eer
