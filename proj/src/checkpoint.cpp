#include "holitok/checkpoint.hpp"

#include <cstdio>
#include <fstream>

namespace holitok {

namespace {

constexpr char kMagic[4] = {'H', 'T', 'O', 'K'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            fail("truncated checkpoint while reading " + std::string(what) + ": expected " +
                 std::to_string(pos + n) + " bytes, file has " + std::to_string(buf.size()));
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return buf[pos++];
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos++]) << (8 * i);
        return v;
    }
    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
    std::vector<uint8_t> raw(size_t n, const char* what) {
        need(n, what);
        std::vector<uint8_t> v(buf.begin() + pos, buf.begin() + pos + n);
        pos += n;
        return v;
    }
};

size_t dtype_size(uint8_t code, const std::string& name) {
    switch (code) {
        case 0: return 4;
        case 1: return 8;
        case 2: return 1;
        default: fail("unknown dtype code " + std::to_string(code) + " for tensor '" + name + "'");
    }
}

}  // namespace

void save_blobs(const std::string& path, const BlobMap& blobs) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(blobs.size()));
    for (const auto& [name, b] : blobs) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        out.push_back(static_cast<char>(b.dtype));
        out.push_back(static_cast<char>(b.dims.size()));
        for (uint32_t d : b.dims) put_u32(out, d);
        size_t want = b.numel() * dtype_size(b.dtype, name);
        if (want != b.bytes.size())
            fail("blob '" + name + "' payload size " + std::to_string(b.bytes.size()) +
                 " does not match dims (" + std::to_string(want) + ")");
        out.append(reinterpret_cast<const char*>(b.bytes.data()), b.bytes.size());
    }
    // write to a temp file then rename, so a crash never leaves a torn checkpoint
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) fail("cannot open '" + tmp + "' for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) fail("write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) fail("cannot rename '" + tmp + "' to '" + path + "'");
}

BlobMap load_blobs(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open checkpoint '" + path + "'");
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    std::string magic = r.str(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        fail("bad checkpoint magic in '" + path + "': expected \"HTOK\"");
    uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        fail("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
             std::to_string(kCheckpointVersion) + ")");
    uint32_t count = r.u32("tensor count");
    BlobMap blobs;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = r.u32("name length");
        std::string name = r.str(name_len, "tensor name");
        TensorBlob b;
        b.dtype = r.u8("dtype");
        uint8_t rank = r.u8("rank");
        for (uint8_t d = 0; d < rank; ++d) b.dims.push_back(r.u32("dims"));
        size_t payload = b.numel() * dtype_size(b.dtype, name);
        b.bytes = r.raw(payload, ("payload of '" + name + "'").c_str());
        blobs.emplace(std::move(name), std::move(b));
    }
    if (r.pos != buf.size())
        fail("checkpoint '" + path + "' has " + std::to_string(buf.size() - r.pos) + " trailing bytes");
    return blobs;
}

}  // namespace holitok
