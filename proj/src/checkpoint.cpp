#include "bido/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "bido/error.hpp"
#include "bido/io.hpp"

namespace bido {
namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
   public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

   private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw Error(ErrorCode::BadCheckpoint, "truncated checkpoint");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(std::span<const NamedParam> tensors) {
    std::vector<std::uint8_t> out{'B', 'I', 'D', 'O'};
    put_le<std::uint16_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedParam& p : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        const Shape& shape = p.tensor.shape();
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t e : shape) put_le<std::uint64_t>(out, e);
        for (double v : p.tensor.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

std::vector<NamedParam> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    auto magic = in.take(4);
    if (std::memcmp(magic.data(), "BIDO", 4) != 0) throw Error(ErrorCode::BadCheckpoint, "bad magic");
    const auto version = in.get<std::uint16_t>();
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::BadCheckpoint, "unsupported version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    std::vector<NamedParam> out;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = in.get<std::uint32_t>();
        auto name = in.take(name_len);
        const auto rank = in.get<std::uint32_t>();
        if (rank > 16) throw Error(ErrorCode::BadCheckpoint, "implausible rank");
        Shape shape(rank);
        std::uint64_t total = 1;
        for (auto& e : shape) {
            e = static_cast<std::size_t>(in.get<std::uint64_t>());
            total *= e;
            if (total > bytes.size()) throw Error(ErrorCode::BadCheckpoint, "extent larger than file");
        }
        std::vector<double> values(static_cast<std::size_t>(total));
        for (double& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>());
        out.push_back({std::string(name.begin(), name.end()), Tensor(std::move(shape), std::move(values))});
    }
    if (!in.done()) throw Error(ErrorCode::BadCheckpoint, "trailing bytes");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedParam> tensors) {
    write_bytes(path, serialize_checkpoint(tensors));
}

std::vector<NamedParam> load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_bytes(path));
}

}  // namespace bido
