#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/rng.hpp"

namespace seqdab {

// ranks[j] = temporal rank of the frame shown at position j.
// The identity permutation presents frames in capture order.
struct Permutation {
  std::vector<std::uint8_t> ranks;

  int size() const { return static_cast<int>(ranks.size()); }
  bool operator==(const Permutation& o) const { return ranks == o.ranks; }
  bool operator<(const Permutation& o) const { return ranks < o.ranks; }
};

inline Permutation identity_perm(int n) {
  Permutation p;
  p.ranks.resize(static_cast<std::size_t>(n));
  std::iota(p.ranks.begin(), p.ranks.end(), std::uint8_t(0));
  return p;
}

inline bool is_valid(const Permutation& p) {
  const int n = p.size();
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (std::uint8_t r : p.ranks) {
    if (r >= n || seen[r]) return false;
    seen[r] = true;
  }
  return n > 0;
}

inline std::string to_string(const Permutation& p) {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < p.size(); ++i)
    os << (i ? "," : "") << static_cast<int>(p.ranks[static_cast<std::size_t>(i)]);
  os << ')';
  return os.str();
}

// Number of merged forward/backward classes: n!/2.
inline int num_classes(int n) {
  check_config(n >= 2 && n <= 12, "num_classes requires 2 <= n <= 12");
  std::int64_t f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return static_cast<int>(f / 2);
}

inline std::int64_t factorial(int n) {
  check_config(n >= 0 && n <= 20, "factorial range");
  std::int64_t f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

inline Permutation time_reverse(const Permutation& p) {
  check(is_valid(p), "time_reverse: invalid permutation");
  const int n = p.size();
  Permutation out = p;
  for (auto& r : out.ranks) r = static_cast<std::uint8_t>(n - 1 - r);
  return out;
}

// Lexicographically smaller of a permutation and its time reversal; both
// members of a forward/backward pair map to the same representative.
inline Permutation canonicalize(const Permutation& p) {
  Permutation rev = time_reverse(p);
  return std::min(p, rev);
}

// All n! permutations in lexicographic order. Intended for small n; the
// guard keeps the table sizes sane.
inline const std::vector<Permutation>& enumerate_permutations(int n) {
  check_config(n >= 2 && n <= 6, "enumerate_permutations requires 2 <= n <= 6");
  static std::map<int, std::vector<Permutation>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    std::vector<Permutation> all;
    Permutation p = identity_perm(n);
    do {
      all.push_back(p);
    } while (std::next_permutation(p.ranks.begin(), p.ranks.end()));
    it = cache.emplace(n, std::move(all)).first;
  }
  return it->second;
}

// Sorted canonical representatives; index in this list is the class id.
inline const std::vector<Permutation>& canonical_classes(int n) {
  static std::map<int, std::vector<Permutation>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    std::vector<Permutation> reps;
    for (const Permutation& p : enumerate_permutations(n)) {
      if (canonicalize(p) == p) reps.push_back(p);
    }
    check(static_cast<int>(reps.size()) == num_classes(n),
          "canonical class count mismatch");
    it = cache.emplace(n, std::move(reps)).first;
  }
  return it->second;
}

inline int encode(const Permutation& p) {
  check(is_valid(p), "encode: invalid permutation " + to_string(p));
  const auto& reps = canonical_classes(p.size());
  const Permutation c = canonicalize(p);
  auto it = std::lower_bound(reps.begin(), reps.end(), c);
  check(it != reps.end() && *it == c, "encode: representative not found");
  return static_cast<int>(it - reps.begin());
}

inline Permutation decode(int class_id, int n) {
  const auto& reps = canonical_classes(n);
  check_config(class_id >= 0 && class_id < static_cast<int>(reps.size()),
               "decode: class id out of range");
  return reps[static_cast<std::size_t>(class_id)];
}

inline Permutation random_permutation(int n, Rng& rng) {
  Permutation p = identity_perm(n);
  std::shuffle(p.ranks.begin(), p.ranks.end(), rng);
  return p;
}

}  // namespace seqdab
