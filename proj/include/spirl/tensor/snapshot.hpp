// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "spirl/tensor/params.hpp"

namespace spirl::ad {

// SPNT parameter snapshot:
//   "SPNT" | version u32 | records until end of file
//   record = name_len u32 | UTF-8 name | rank u32 | dims u64 x rank | f32 x numel
// All integers and floats little-endian.
inline constexpr std::uint32_t kSnapshotVersion = 1;

struct SnapshotRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void write_snapshot(std::ostream& out, const std::vector<SnapshotRecord>& records);
std::vector<SnapshotRecord> read_snapshot(std::istream& in);

void save_snapshot(const std::filesystem::path& path, const std::vector<SnapshotRecord>& records);
std::vector<SnapshotRecord> load_snapshot(const std::filesystem::path& path);

template <class T>
std::vector<SnapshotRecord> to_records(const ParamList<T>& params) {
  std::vector<SnapshotRecord> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.push_back({p.name, p.tensor.shape(),
                   std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

// Copies matching records into the parameters in place. Every parameter must
// be present with an identical shape; extra records are ignored.
template <class T>
void assign_from_records(const ParamList<T>& params, const std::vector<SnapshotRecord>& records);

const SnapshotRecord* find_record(const std::vector<SnapshotRecord>& records,
                                  const std::string& name);

}  // namespace spirl::ad
