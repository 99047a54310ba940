#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mlmv {

// Counter-based Philox4x32-10 stream. A stream is a value: copying it forks the
// sequence, derive() gives an independent child keyed by a tag and indices.
class Stream {
 public:
  explicit Stream(std::uint64_t seed = 0, std::uint64_t id = 0);

  Stream derive(std::string_view tag, std::uint64_t i = 0, std::uint64_t j = 0,
                std::uint64_t k = 0) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t id() const { return id_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t id_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t hash_tag(std::string_view tag);
std::uint64_t mix64(std::uint64_t x);

}  // namespace mlmv
