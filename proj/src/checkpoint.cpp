#include "sleepyco/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace sleepyco {

namespace {

void check_little_endian() {
    const std::uint32_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    if (b != 1)
        throw std::runtime_error("checkpoint: big-endian hosts are not supported");
}

}  // namespace

void Checkpoint::add(const std::string& name, const Shape& shape,
                     const std::vector<double>& data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("checkpoint: shape/data mismatch for " + name);
    if (has(name))
        throw std::invalid_argument("checkpoint: duplicate entry " + name);
    entries_.push_back({name, shape, data});
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

const CheckpointEntry& Checkpoint::get(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw std::out_of_range("checkpoint: no entry named " + name);
}

void Checkpoint::save(const std::string& stem) const {
    check_little_endian();
    const std::string bin_path = stem + ".bin";
    const std::string json_path = stem + ".json";

    nlohmann::json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["version"] = kCheckpointVersion;
    manifest["dtype"] = "f64";
    manifest["payload"] = bin_path.substr(bin_path.find_last_of('/') + 1);
    nlohmann::json list = nlohmann::json::array();

    std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
    if (!bin) throw std::runtime_error("checkpoint: cannot write " + bin_path);
    std::size_t offset = 0;
    for (const auto& e : entries_) {
        nlohmann::json j;
        j["name"] = e.name;
        j["shape"] = e.shape;
        j["offset"] = offset;
        j["count"] = e.data.size();
        list.push_back(j);
        bin.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(double)));
        offset += e.data.size() * sizeof(double);
    }
    manifest["entries"] = list;
    bin.close();

    std::ofstream js(json_path, std::ios::trunc);
    if (!js) throw std::runtime_error("checkpoint: cannot write " + json_path);
    js << manifest.dump(2) << "\n";
}

Checkpoint Checkpoint::load(const std::string& stem) {
    check_little_endian();
    const std::string json_path = stem + ".json";
    std::ifstream js(json_path);
    if (!js) throw std::runtime_error("checkpoint: cannot open " + json_path);
    nlohmann::json manifest = nlohmann::json::parse(js);
    if (manifest.value("format", "") != kCheckpointFormat)
        throw std::runtime_error("checkpoint: bad format tag in " + json_path);
    if (manifest.value("version", -1) != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + json_path);
    if (manifest.value("dtype", "") != "f64")
        throw std::runtime_error("checkpoint: unsupported dtype in " + json_path);

    std::string dir;
    const auto slash = stem.find_last_of('/');
    if (slash != std::string::npos) dir = stem.substr(0, slash + 1);
    const std::string bin_path = dir + manifest.at("payload").get<std::string>();
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("checkpoint: cannot open " + bin_path);

    Checkpoint ckpt;
    for (const auto& j : manifest.at("entries")) {
        CheckpointEntry e;
        e.name = j.at("name").get<std::string>();
        e.shape = j.at("shape").get<Shape>();
        const std::size_t count = j.at("count").get<std::size_t>();
        const std::size_t offset = j.at("offset").get<std::size_t>();
        if (count != shape_numel(e.shape))
            throw std::runtime_error("checkpoint: count/shape mismatch for " + e.name);
        e.data.resize(count);
        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(count * sizeof(double)));
        if (!bin)
            throw std::runtime_error("checkpoint: truncated payload reading " + e.name);
        ckpt.entries_.push_back(std::move(e));
    }
    return ckpt;
}

}  // namespace sleepyco
