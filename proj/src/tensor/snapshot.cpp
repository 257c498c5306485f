// SPDX-License-Identifier: Apache-2.0
#include "spirl/tensor/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "spirl/common/binary_io.hpp"
#include "spirl/common/error.hpp"

namespace spirl::ad {

void write_snapshot(std::ostream& out, const std::vector<SnapshotRecord>& records) {
  out.write("SPNT", 4);
  io::write_u32(out, kSnapshotVersion);
  for (const auto& r : records) {
    if (r.data.size() != numel(r.shape)) {
      throw ShapeError("snapshot record " + r.name + " has inconsistent size");
    }
    io::write_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    io::write_u32(out, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) io::write_u64(out, d);
    for (float v : r.data) io::write_f32(out, v);
  }
  if (!out) throw FormatError("failed writing snapshot");
}

std::vector<SnapshotRecord> read_snapshot(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SPNT", 4) != 0) {
    throw FormatError("not an SPNT snapshot (bad magic)");
  }
  const std::uint32_t version = io::read_u32(in);
  if (version != kSnapshotVersion) {
    throw FormatError("unsupported SPNT version " + std::to_string(version));
  }
  std::vector<SnapshotRecord> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    SnapshotRecord r;
    const std::uint32_t name_len = io::read_u32(in);
    if (name_len > (1u << 16)) throw FormatError("snapshot record name too long");
    r.name.resize(name_len);
    if (!in.read(r.name.data(), name_len)) throw FormatError("truncated snapshot name");
    const std::uint32_t rank = io::read_u32(in);
    if (rank > 16) throw FormatError("snapshot record rank too large");
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(io::read_u64(in));
    const std::size_t n = numel(r.shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("snapshot record too large");
    r.data.resize(n);
    for (auto& v : r.data) v = io::read_f32(in);
    records.push_back(std::move(r));
  }
  return records;
}

void save_snapshot(const std::filesystem::path& path, const std::vector<SnapshotRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_snapshot(out, records);
}

std::vector<SnapshotRecord> load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_snapshot(in);
}

const SnapshotRecord* find_record(const std::vector<SnapshotRecord>& records,
                                  const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

template <class T>
void assign_from_records(const ParamList<T>& params, const std::vector<SnapshotRecord>& records) {
  for (const auto& p : params) {
    const SnapshotRecord* r = find_record(records, p.name);
    if (!r) throw FormatError("snapshot is missing tensor " + p.name);
    if (r->shape != p.tensor.shape()) {
      throw FormatError("snapshot tensor " + p.name + " has shape " + to_string(r->shape) +
                        ", expected " + to_string(p.tensor.shape()));
    }
    auto t = p.tensor;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r->data[i]);
  }
}

template void assign_from_records(const ParamList<float>&, const std::vector<SnapshotRecord>&);
template void assign_from_records(const ParamList<double>&, const std::vector<SnapshotRecord>&);

}  // namespace spirl::ad
