#include "fedbev/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "fedbev/error.hpp"

namespace fedbev {

namespace {

constexpr std::string_view kMagic = "FEDBEV-CHECKPOINT";

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += fmt::format("{}{}", i ? "," : "", v[i]);
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += fmt::format("{}{}", i ? "," : "", v[i]);
  return out;
}

template <typename T>
std::vector<T> split_list(const std::string& text) {
  std::vector<T> out;
  if (text.empty() || text == "-") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if constexpr (std::is_same_v<T, double>) {
      out.push_back(std::stod(item));
    } else {
      out.push_back(static_cast<T>(std::stoull(item)));
    }
  }
  return out;
}

std::string expect_line(std::istream& in, std::string_view what) {
  std::string line;
  if (!std::getline(in, line)) throw Error(fmt::format("checkpoint: truncated header (expected {})", what));
  return line;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& arch = ckpt.arch;
  const auto& partition = ckpt.params.partition();
  if (!(partition == LayerPartition::for_arch(arch))) {
    throw PartitionMismatchError("checkpoint: parameters do not match the architecture");
  }
  out << kMagic << ' ' << Checkpoint::kFormatVersion << '\n';
  out << fmt::format("arch {} {} {} {} {}\n", to_string(arch.kind), arch.steps, arch.features,
                     join_sizes(arch.hidden), arch.dropout.empty() ? "-" : join_doubles(arch.dropout));
  out << fmt::format("tag {} {} {}\n", ckpt.round, ckpt.algorithm.empty() ? "-" : ckpt.algorithm,
                     ckpt.client.empty() ? "-" : ckpt.client);
  out << fmt::format("segments {}\n", partition.segments().size());
  for (const auto& s : partition.segments()) {
    out << fmt::format("{} {} {} {} {}\n", s.name, s.rows, s.cols, s.offset, s.note.empty() ? "-" : s.note);
  }
  out << fmt::format("payload {} f64le\n", ckpt.params.size());
  std::string bytes(ckpt.params.size() * 8, '\0');
  const auto values = ckpt.params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  {
    std::istringstream first(expect_line(in, "magic"));
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kMagic) throw Error("checkpoint: bad magic");
    if (version != Checkpoint::kFormatVersion) {
      throw SchemaVersionError(fmt::format("checkpoint: format version {} not supported (expected {})", version,
                                           Checkpoint::kFormatVersion));
    }
  }
  {
    std::istringstream line(expect_line(in, "arch"));
    std::string key, kind, hidden, dropout;
    line >> key >> kind >> ckpt.arch.steps >> ckpt.arch.features >> hidden >> dropout;
    if (key != "arch") throw Error("checkpoint: expected arch line");
    ckpt.arch.kind = parse_model_kind(kind);
    ckpt.arch.hidden = split_list<std::size_t>(hidden);
    ckpt.arch.dropout = split_list<double>(dropout);
  }
  {
    std::istringstream line(expect_line(in, "tag"));
    std::string key, algorithm, client;
    line >> key >> ckpt.round >> algorithm >> client;
    if (key != "tag") throw Error("checkpoint: expected tag line");
    ckpt.algorithm = algorithm == "-" ? "" : algorithm;
    ckpt.client = client == "-" ? "" : client;
  }
  std::size_t count = 0;
  {
    std::istringstream line(expect_line(in, "segments"));
    std::string key;
    line >> key >> count;
    if (key != "segments") throw Error("checkpoint: expected segments line");
  }
  std::vector<Segment> segments;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line(expect_line(in, "segment"));
    Segment s;
    line >> s.name >> s.rows >> s.cols >> s.offset >> s.note;
    if (s.note == "-") s.note.clear();
    segments.push_back(std::move(s));
  }
  auto partition = std::make_shared<const LayerPartition>(std::move(segments));
  if (!(*partition == LayerPartition::for_arch(ckpt.arch))) {
    throw PartitionMismatchError("checkpoint: segment table does not match the architecture");
  }
  std::size_t n = 0;
  {
    std::istringstream line(expect_line(in, "payload"));
    std::string key, encoding;
    line >> key >> n >> encoding;
    if (key != "payload" || encoding != "f64le") throw Error("checkpoint: expected payload line");
    if (n != partition->total_size()) throw PartitionMismatchError("checkpoint: payload size mismatch");
  }
  std::string bytes(n * 8, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw Error("checkpoint: truncated payload");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + static_cast<std::size_t>(b)])) << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
  }
  ckpt.params = ParamVector(std::move(partition), std::move(values));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("{}: cannot write checkpoint", path.string()));
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("{}: cannot open checkpoint", path.string()));
  return read_checkpoint(in);
}

}  // namespace fedbev
