#ifndef FSSEG_CHECKPOINT_HPP
#define FSSEG_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fsseg/optimizer.hpp"

namespace fsseg {

struct CheckpointMeta {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    int epoch = 0;
};

/// Single-file archive: 8-byte magic, little-endian u64 JSON index length,
/// the JSON index (metadata plus name/shape/offset per array), then raw
/// float32 data. Written to <path>.tmp and renamed, so readers never see a
/// partial file.
void save_checkpoint(const std::string& path, const std::vector<ParamRef<float>>& refs,
                     const CheckpointMeta& meta);

/// Load named arrays back into the given tensors. Every requested name must
/// exist with a matching shape, and the file may not contain extras; both
/// directions of drift are errors.
CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<ParamRef<float>>& refs);

/// Index listing without touching any tensor.
std::vector<std::string> checkpoint_names(const std::string& path);

}  // namespace fsseg

#endif
