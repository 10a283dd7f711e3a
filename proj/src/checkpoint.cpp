#include "dbmif/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace dbmif {

static const char kMagic[6] = {'D', 'B', 'M', 'I', 'F', '1'};

void ParamRegistry::add(const std::string& name, const Tensor& t) {
    if (name.empty()) throw config_error("param registry: empty name");
    if (!t.defined()) throw config_error(cat("param registry: undefined tensor for '", name, "'"));
    if (index_.count(name))
        throw config_error(cat("param registry: duplicate name '", name, "'"));
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
}

const Tensor& ParamRegistry::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw precondition_error(cat("param registry: unknown name '", name, "'"));
    return entries_[it->second].second;
}

std::vector<Tensor> ParamRegistry::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.push_back(t);
    return out;
}

int64_t ParamRegistry::total_values() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

static void write_u64(std::ofstream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

static uint64_t read_u64(std::ifstream& is, const std::string& path) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw io_error(cat("checkpoint '", path, "': truncated"));
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

static void write_f32(std::ofstream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

static float read_f32(std::ifstream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw io_error(cat("checkpoint '", path, "': truncated"));
    uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<uint32_t>(b[i]) << (8 * i);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

void save_checkpoint(const std::string& path, const ParamRegistry& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error(cat("checkpoint '", path, "': cannot open for writing"));
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, params.size());
    for (const auto& [name, t] : params.entries()) {
        write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& s = t.shape();
        write_u64(os, s.size());
        for (int64_t d : s) write_u64(os, static_cast<uint64_t>(d));
        for (double v : t.values()) write_f32(os, static_cast<float>(v));
    }
    if (!os) throw io_error(cat("checkpoint '", path, "': write failed"));
}

void load_checkpoint(const std::string& path, ParamRegistry& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error(cat("checkpoint '", path, "': cannot open"));
    char magic[6];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw io_error(cat("checkpoint '", path, "': bad magic, not a DBMIF1 file"));
    const uint64_t count = read_u64(is, path);
    if (count != params.size())
        throw io_error(cat("checkpoint '", path, "': holds ", count, " parameters, model has ",
                           params.size()));
    std::set<std::string> seen;
    for (uint64_t r = 0; r < count; ++r) {
        const uint64_t name_len = read_u64(is, path);
        if (name_len > (1u << 20)) throw io_error(cat("checkpoint '", path, "': absurd name length"));
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw io_error(cat("checkpoint '", path, "': truncated name"));
        if (!params.contains(name))
            throw io_error(cat("checkpoint '", path, "': unknown parameter '", name, "'"));
        if (!seen.insert(name).second)
            throw io_error(cat("checkpoint '", path, "': duplicate parameter '", name, "'"));
        const uint64_t rank = read_u64(is, path);
        Shape shape(rank);
        for (uint64_t i = 0; i < rank; ++i)
            shape[i] = static_cast<int64_t>(read_u64(is, path));
        Tensor t = params.find(name);
        if (shape != t.shape())
            throw io_error(cat("checkpoint '", path, "': parameter '", name, "' has shape ",
                               shape_str(shape), ", model expects ", shape_str(t.shape())));
        std::vector<double>& vals = t.mutable_values();
        for (double& v : vals) v = static_cast<double>(read_f32(is, path));
    }
}

}  // namespace dbmif
