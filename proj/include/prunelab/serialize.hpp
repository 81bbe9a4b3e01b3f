#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunelab/common.hpp"

namespace prunelab {

// Named-tensor container.
//
// Layout: a plain-text header, then raw binary payloads.
//
//   ndtensor 1
//   meta <key> <value...>
//   tensor <name> <f32|u8> <rank> <dims...> <byte-offset> <numel>
//   data
//   <payload>
//
// Offsets are relative to the first byte after the "data" line. f32 payloads
// are little-endian IEEE-754 binary32 in row-major order; u8 payloads are
// raw bytes. Round-trips are bit-exact.
struct TensorRecord {
    std::string name;
    bool is_u8{false};
    std::vector<int64_t> shape;
    std::vector<float> f32;
    std::vector<uint8_t> u8;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
};

class TensorContainer {
public:
    void set_meta(const std::string& key, const std::string& value);
    bool has_meta(const std::string& key) const;
    const std::string& meta(const std::string& key) const;
    std::string meta_or(const std::string& key, const std::string& fallback) const;
    int64_t meta_int(const std::string& key) const;
    uint64_t meta_uint(const std::string& key) const;
    double meta_double(const std::string& key) const;

    void add_f32(const std::string& name, std::vector<int64_t> shape,
                 std::vector<float> values);
    void add_u8(const std::string& name, std::vector<int64_t> shape,
                std::vector<uint8_t> values);

    bool has(const std::string& name) const;
    const TensorRecord& get(const std::string& name) const;
    const std::vector<TensorRecord>& records() const { return records_; }
    const std::vector<std::pair<std::string, std::string>>& metas() const {
        return meta_;
    }

    void write(const std::string& path) const;
    static TensorContainer read(const std::string& path);

private:
    std::vector<std::pair<std::string, std::string>> meta_;
    std::vector<TensorRecord> records_;
};

}  // namespace prunelab
