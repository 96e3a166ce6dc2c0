#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "fedbev/nn.hpp"

namespace fedbev {

/// Model checkpoint: a text header (format version, architecture, segment
/// table, tags) followed by the parameters as raw little-endian IEEE-754
/// doubles. Loading a saved file reproduces the vector bit for bit.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  ArchSpec arch;
  ParamVector params;
  int round = -1;          // -1 when untagged
  std::string algorithm;   // empty when untagged
  std::string client;      // empty for global models
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedbev
