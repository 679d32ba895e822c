#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "schedule.hpp"
#include "tensor.hpp"

namespace catgen {

// Framed binary checkpoint: magic "CATG", a u32 format version, then
// length-prefixed named sections. Tensors are stored as raw little-endian
// f64 so load(save(m)) reproduces every value bitwise.

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string config_text;
    bool has_schedule = false;
    NoiseSchedule schedule;
    std::vector<std::pair<std::string, Tensor>> params;
    std::string rng_state;
};

namespace ckpt_detail {

inline void put_u32(std::string& buf, uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::string& buf, uint64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
inline void put_i64(std::string& buf, int64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
inline void put_f64(std::string& buf, double v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<uint32_t>(s.size()));
    buf.append(s);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated section");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    int64_t i64() {
        need(8);
        int64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline void put_array(std::string& buf, const std::vector<double>& v) {
    put_u64(buf, v.size());
    for (double x : v) put_f64(buf, x);
}

inline std::vector<double> get_array(Reader& r) {
    uint64_t n = r.u64();
    std::vector<double> v(n);
    for (uint64_t i = 0; i < n; ++i) v[i] = r.f64();
    return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    using namespace ckpt_detail;
    std::vector<std::pair<std::string, std::string>> sections;

    sections.emplace_back("config", ck.config_text);

    if (ck.has_schedule) {
        std::string s;
        put_u32(s, static_cast<uint32_t>(ck.schedule.T));
        put_f64(s, ck.schedule.s);
        put_array(s, ck.schedule.log_alpha);
        put_array(s, ck.schedule.log_cumprod_alpha);
        put_array(s, ck.schedule.log_1_min_alpha);
        put_array(s, ck.schedule.log_1_min_cumprod_alpha);
        sections.emplace_back("schedule", std::move(s));
    }

    {
        std::string s;
        put_u32(s, static_cast<uint32_t>(ck.params.size()));
        for (const auto& [name, tensor] : ck.params) {
            put_str(s, name);
            put_u32(s, static_cast<uint32_t>(tensor.shape.size()));
            for (int64_t e : tensor.shape) put_i64(s, e);
            put_array(s, tensor.data);
        }
        sections.emplace_back("params", std::move(s));
    }

    sections.emplace_back("rng", ck.rng_state);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    std::string head = "CATG";
    uint32_t ver = kCheckpointVersion;
    head.append(reinterpret_cast<const char*>(&ver), 4);
    uint32_t nsec = static_cast<uint32_t>(sections.size());
    head.append(reinterpret_cast<const char*>(&nsec), 4);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, payload] : sections) {
        std::string frame;
        put_str(frame, name);
        put_u64(frame, payload.size());
        out.write(frame.data(), static_cast<std::streamsize>(frame.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "CATG") != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t ver, nsec;
    std::memcpy(&ver, buf.data() + 4, 4);
    std::memcpy(&nsec, buf.data() + 8, 4);
    if (ver != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(ver));
    Checkpoint ck;
    size_t pos = 12;
    for (uint32_t i = 0; i < nsec; ++i) {
        std::string rest = buf.substr(pos);
        Reader rh(rest);
        std::string name = rh.str();
        uint64_t len = rh.u64();
        pos += rh.pos;
        if (pos + len > buf.size()) throw std::runtime_error("checkpoint: truncated file");
        std::string payload = buf.substr(pos, len);
        pos += len;
        Reader r(payload);
        if (name == "config") {
            ck.config_text = payload;
        } else if (name == "schedule") {
            ck.has_schedule = true;
            ck.schedule.T = static_cast<int>(r.u32());
            ck.schedule.s = r.f64();
            ck.schedule.log_alpha = get_array(r);
            ck.schedule.log_cumprod_alpha = get_array(r);
            ck.schedule.log_1_min_alpha = get_array(r);
            ck.schedule.log_1_min_cumprod_alpha = get_array(r);
        } else if (name == "params") {
            uint32_t count = r.u32();
            for (uint32_t p = 0; p < count; ++p) {
                std::string pname = r.str();
                uint32_t rank = r.u32();
                std::vector<int64_t> shape(rank);
                for (uint32_t j = 0; j < rank; ++j) shape[j] = r.i64();
                std::vector<double> data = get_array(r);
                ck.params.emplace_back(pname, Tensor(std::move(shape), std::move(data)));
            }
        } else if (name == "rng") {
            ck.rng_state = payload;
        } else {
            throw std::runtime_error("checkpoint: unknown section '" + name + "'");
        }
    }
    return ck;
}

}  // namespace catgen
