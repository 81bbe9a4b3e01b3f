#include "prunelab/serialize.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace prunelab {

namespace {

void check_name(const std::string& name) {
    if (name.empty()) throw IoError("tensor name must not be empty");
    for (char c : name) {
        if (c == ' ' || c == '\n' || c == '\t') {
            throw IoError("tensor name contains whitespace: '" + name + "'");
        }
    }
}

}  // namespace

void TensorContainer::set_meta(const std::string& key, const std::string& value) {
    check_name(key);
    for (auto& kv : meta_) {
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    }
    meta_.emplace_back(key, value);
}

bool TensorContainer::has_meta(const std::string& key) const {
    for (const auto& kv : meta_) {
        if (kv.first == key) return true;
    }
    return false;
}

const std::string& TensorContainer::meta(const std::string& key) const {
    for (const auto& kv : meta_) {
        if (kv.first == key) return kv.second;
    }
    throw IoError("missing meta key '" + key + "'");
}

std::string TensorContainer::meta_or(const std::string& key,
                                     const std::string& fallback) const {
    return has_meta(key) ? meta(key) : fallback;
}

int64_t TensorContainer::meta_int(const std::string& key) const {
    try {
        return std::stoll(meta(key));
    } catch (const std::invalid_argument&) {
        throw IoError("meta key '" + key + "' is not an integer: '" + meta(key) + "'");
    } catch (const std::out_of_range&) {
        throw IoError("meta key '" + key + "' overflows a signed integer: '" + meta(key) + "'");
    }
}

uint64_t TensorContainer::meta_uint(const std::string& key) const {
    // Hashes occupy the full 64-bit range, so they cannot go through
    // meta_int: half of all values would overflow the signed parse.
    try {
        return std::stoull(meta(key));
    } catch (const std::invalid_argument&) {
        throw IoError("meta key '" + key + "' is not an unsigned integer: '" + meta(key) + "'");
    } catch (const std::out_of_range&) {
        throw IoError("meta key '" + key + "' overflows 64 bits: '" + meta(key) + "'");
    }
}

double TensorContainer::meta_double(const std::string& key) const {
    try {
        return std::stod(meta(key));
    } catch (const std::invalid_argument&) {
        throw IoError("meta key '" + key + "' is not a number: '" + meta(key) + "'");
    } catch (const std::out_of_range&) {
        throw IoError("meta key '" + key + "' is out of double range: '" + meta(key) + "'");
    }
}

void TensorContainer::add_f32(const std::string& name,
                              std::vector<int64_t> shape,
                              std::vector<float> values) {
    check_name(name);
    if (has(name)) throw IoError("duplicate tensor name '" + name + "'");
    TensorRecord r;
    r.name = name;
    r.shape = std::move(shape);
    if (static_cast<int64_t>(values.size()) != r.numel()) {
        throw IoError("tensor '" + name + "' payload size mismatch");
    }
    r.f32 = std::move(values);
    records_.push_back(std::move(r));
}

void TensorContainer::add_u8(const std::string& name, std::vector<int64_t> shape,
                             std::vector<uint8_t> values) {
    check_name(name);
    if (has(name)) throw IoError("duplicate tensor name '" + name + "'");
    TensorRecord r;
    r.name = name;
    r.is_u8 = true;
    r.shape = std::move(shape);
    if (static_cast<int64_t>(values.size()) != r.numel()) {
        throw IoError("tensor '" + name + "' payload size mismatch");
    }
    r.u8 = std::move(values);
    records_.push_back(std::move(r));
}

bool TensorContainer::has(const std::string& name) const {
    return std::any_of(records_.begin(), records_.end(),
                       [&](const TensorRecord& r) { return r.name == name; });
}

const TensorRecord& TensorContainer::get(const std::string& name) const {
    for (const auto& r : records_) {
        if (r.name == name) return r;
    }
    throw IoError("missing tensor '" + name + "'");
}

void TensorContainer::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");

    std::ostringstream header;
    header << "ndtensor 1\n";
    for (const auto& kv : meta_) header << "meta " << kv.first << " " << kv.second << "\n";
    int64_t offset = 0;
    for (const auto& r : records_) {
        header << "tensor " << r.name << " " << (r.is_u8 ? "u8" : "f32") << " "
               << r.shape.size();
        for (int64_t d : r.shape) header << " " << d;
        header << " " << offset << " " << r.numel() << "\n";
        offset += r.numel() * (r.is_u8 ? 1 : 4);
    }
    header << "data\n";
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& r : records_) {
        if (r.is_u8) {
            out.write(reinterpret_cast<const char*>(r.u8.data()),
                      static_cast<std::streamsize>(r.u8.size()));
        } else {
            out.write(reinterpret_cast<const char*>(r.f32.data()),
                      static_cast<std::streamsize>(r.f32.size() * 4));
        }
    }
    if (!out) throw IoError("short write to '" + path + "'");
}

TensorContainer TensorContainer::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");

    TensorContainer c;
    std::string line;
    if (!std::getline(in, line) || line != "ndtensor 1") {
        throw IoError("'" + path + "' is not a version-1 tensor container");
    }
    struct Pending {
        size_t record;
        int64_t offset;
    };
    std::vector<Pending> pending;
    while (std::getline(in, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            c.meta_.emplace_back(key, value);
        } else if (tag == "tensor") {
            TensorRecord r;
            std::string dtype;
            size_t rank = 0;
            ls >> r.name >> dtype >> rank;
            r.is_u8 = (dtype == "u8");
            if (!r.is_u8 && dtype != "f32") {
                throw IoError("unknown dtype '" + dtype + "' in '" + path + "'");
            }
            r.shape.resize(rank);
            for (size_t i = 0; i < rank; ++i) ls >> r.shape[i];
            int64_t offset = 0, count = 0;
            ls >> offset >> count;
            if (!ls || count != r.numel()) {
                throw IoError("malformed tensor record in '" + path + "'");
            }
            pending.push_back({c.records_.size(), offset});
            c.records_.push_back(std::move(r));
        } else {
            throw IoError("unexpected header line in '" + path + "': " + line);
        }
    }
    const std::streampos payload_start = in.tellg();
    for (const Pending& p : pending) {
        TensorRecord& r = c.records_[p.record];
        in.seekg(payload_start + std::streampos(p.offset));
        if (r.is_u8) {
            r.u8.resize(static_cast<size_t>(r.numel()));
            in.read(reinterpret_cast<char*>(r.u8.data()),
                    static_cast<std::streamsize>(r.u8.size()));
        } else {
            r.f32.resize(static_cast<size_t>(r.numel()));
            in.read(reinterpret_cast<char*>(r.f32.data()),
                    static_cast<std::streamsize>(r.f32.size() * 4));
        }
        if (!in) throw IoError("truncated payload in '" + path + "'");
    }
    return c;
}

}  // namespace prunelab
