#include "fedsplit/serialize.hpp"

#include <cstring>
#include <fstream>

#include "fedsplit/common.hpp"

namespace fedsplit::nn {

namespace {

constexpr std::uint32_t kFormatVersion = 1;
constexpr char kMagic[4] = {'F', 'S', 'W', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) {
            throw ConfigError("weight blob truncated: need " + std::to_string(n) + " bytes at offset " +
                              std::to_string(pos) + ", have " + std::to_string(buf.size() - pos));
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
};

} // namespace

std::vector<std::uint8_t> serialize_weights(const std::vector<Tensor>& tensors) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (size_t d = 0; d < t.rank(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
        for (size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
    }
    return out;
}

std::vector<std::uint8_t> serialize_weights(const LayerStack& stack) {
    return serialize_weights(stack.state_copy());
}

std::vector<Tensor> deserialize_weights(const std::vector<std::uint8_t>& blob) {
    Reader r{blob};
    r.need(4);
    if (std::memcmp(blob.data(), kMagic, 4) != 0) throw ConfigError("weight blob has wrong magic (want FSW1)");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw ConfigError("weight blob format version " + std::to_string(version) + " unsupported (want " +
                          std::to_string(kFormatVersion) + ")");
    }
    const std::uint32_t count = r.u32();
    std::vector<Tensor> out;
    out.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t rank = r.u32();
        std::vector<size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u32();
        Tensor tensor(shape);
        for (size_t i = 0; i < tensor.size(); ++i) tensor[i] = r.f64();
        out.push_back(std::move(tensor));
    }
    if (r.pos != blob.size()) {
        throw ConfigError("weight blob has " + std::to_string(blob.size() - r.pos) + " trailing bytes");
    }
    return out;
}

void write_weights_file(const std::string& path, const std::vector<Tensor>& tensors) {
    const auto blob = serialize_weights(tensors);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!f) throw ConfigError("failed writing " + path);
}

std::vector<Tensor> read_weights_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path);
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_weights(blob);
}

} // namespace fedsplit::nn
