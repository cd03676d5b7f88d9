#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sleepyco/tensor.hpp"

namespace sleepyco {

// On-disk model state: `<stem>.json` manifest (format tag, entry names,
// shapes, byte offsets) plus `<stem>.bin` little-endian f64 payload.
struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

class Checkpoint {
public:
    void add(const std::string& name, const Shape& shape,
             const std::vector<double>& data);
    bool has(const std::string& name) const;
    const CheckpointEntry& get(const std::string& name) const;
    const std::vector<CheckpointEntry>& entries() const { return entries_; }

    void save(const std::string& stem) const;
    static Checkpoint load(const std::string& stem);

private:
    std::vector<CheckpointEntry> entries_;
};

inline constexpr const char* kCheckpointFormat = "sleepyco-checkpoint";
inline constexpr int kCheckpointVersion = 1;

}  // namespace sleepyco
