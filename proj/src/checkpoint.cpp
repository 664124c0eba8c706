#include "fsseg/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace fsseg {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'S', 'E', 'G', 'N', 'A', '1'};

void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<ParamRef<float>>& refs,
                     const CheckpointMeta& meta) {
    nlohmann::json index;
    index["manifest"] = {{"config_hash", meta.config_hash},
                         {"seed", meta.seed},
                         {"epoch", meta.epoch}};
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& r : refs) {
        entries.push_back({{"name", r.name}, {"shape", r.tensor->shape}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(r.tensor->size()) * sizeof(float);
    }
    index["entries"] = std::move(entries);
    const std::string blob = index.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp);
        os.write(kMagic, 8);
        write_u64_le(os, blob.size());
        os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        for (const auto& r : refs)
            os.write(reinterpret_cast<const char*>(r.tensor->data.data()),
                     static_cast<std::streamsize>(r.tensor->size() * sizeof(float)));
        if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("checkpoint: rename to " + path + " failed");
}

namespace {

nlohmann::json read_index(std::istream& is, const std::string& path) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kMagic, 8))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint64_t len = read_u64_le(is);
    std::string blob(len, '\0');
    is.read(blob.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("checkpoint: truncated index in " + path);
    return nlohmann::json::parse(blob);
}

}  // namespace

CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<ParamRef<float>>& refs) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    nlohmann::json index = read_index(is, path);
    const std::streampos data_start = is.tellg();

    struct Entry {
        std::vector<int> shape;
        std::uint64_t offset;
    };
    std::map<std::string, Entry> by_name;
    for (const auto& e : index.at("entries"))
        by_name[e.at("name").get<std::string>()] = {e.at("shape").get<std::vector<int>>(),
                                                    e.at("offset").get<std::uint64_t>()};
    if (by_name.size() != refs.size())
        throw std::runtime_error("checkpoint: " + path + " holds " +
                                 std::to_string(by_name.size()) + " arrays, expected " +
                                 std::to_string(refs.size()));
    for (const auto& r : refs) {
        auto it = by_name.find(r.name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: missing array " + r.name + " in " + path);
        if (it->second.shape != r.tensor->shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + r.name + " in " + path);
        is.seekg(data_start + static_cast<std::streamoff>(it->second.offset));
        is.read(reinterpret_cast<char*>(r.tensor->data.data()),
                static_cast<std::streamsize>(r.tensor->size() * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated data for " + r.name);
    }

    const auto& m = index.at("manifest");
    CheckpointMeta meta;
    meta.config_hash = m.at("config_hash").get<std::uint64_t>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.epoch = m.at("epoch").get<int>();
    return meta;
}

std::vector<std::string> checkpoint_names(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    nlohmann::json index = read_index(is, path);
    std::vector<std::string> names;
    for (const auto& e : index.at("entries")) names.push_back(e.at("name").get<std::string>());
    return names;
}

}  // namespace fsseg
