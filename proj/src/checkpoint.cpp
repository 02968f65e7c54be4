#include "vqasc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace vqasc {

namespace {

constexpr char kMagic[8] = {'V', 'Q', 'S', 'C', 'C', 'K', 'P', 'T'};

class Writer {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(const std::string& s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
    std::vector<std::uint8_t> out;

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string bytes()
    {
        const auto n = u32();
        need(n);
        std::string s(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                      buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return s;
    }
    void raw(char* dst, std::size_t n)
    {
        need(n);
        std::memcpy(dst, buf.data() + pos, n);
        pos += n;
    }
    bool done() const { return pos == buf.size(); }

private:
    void need(std::size_t n) const
    {
        if (pos + n > buf.size()) throw IoError("checkpoint: truncated data");
    }
    std::uint64_t get(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += static_cast<std::size_t>(n);
        return v;
    }
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt)
{
    Writer w;
    w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
    w.u32(ckpt.version);
    w.u64(ckpt.seed);
    std::ostringstream meta;
    for (const auto& [k, v] : ckpt.metadata) meta << k << '=' << v << '\n';
    w.bytes(meta.str());
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u64(d);
        for (double v : t.data()) w.f64(v);
    }
    return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes)
{
    Reader r(bytes);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("checkpoint: bad magic");
    Checkpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != Checkpoint::kFormatVersion) {
        throw IoError("checkpoint: unsupported format version " + std::to_string(ckpt.version));
    }
    ckpt.seed = r.u64();
    std::istringstream meta(r.bytes());
    for (std::string line; std::getline(meta, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("checkpoint: malformed metadata line");
        ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto count = r.u32();
    for (std::uint32_t e = 0; e < count; ++e) {
        std::string name = r.bytes();
        const auto rank = r.u32();
        if (rank == 0 || rank > 8) throw IoError("checkpoint: bad rank for " + name);
        Shape shape(rank);
        for (auto& d : shape) d = r.u64();
        const std::size_t n = numel(shape);
        if (n == 0 || n > (std::size_t{1} << 32)) throw IoError("checkpoint: bad shape for " + name);
        std::vector<double> values(n);
        for (auto& v : values) v = r.f64();
        ckpt.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) throw IoError("checkpoint: trailing bytes");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace vqasc
