#include "kdf/diffnet.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace kdf::nn {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) {
        out.push_back(static_cast<unsigned char>((v >> (8 * k)) & 0xffU));
    }
}

class Reader {
public:
    Reader(std::span<const unsigned char> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

    std::uint32_t u32(const char* field) {
        need(4, field);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(k)]) << (8 * k);
        }
        pos_ += 4;
        return v;
    }

    std::span<const unsigned char> take(std::size_t n, const char* field) {
        need(n, field);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw IngestionError(source_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
    }

private:
    void need(std::size_t n, const char* field) const {
        if (bytes_.size() - pos_ < n) {
            fail(std::string("truncated snapshot while reading ") + field);
        }
    }

    std::span<const unsigned char> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

} // namespace

ModelSnapshot ModelSnapshot::freeze(const EncoderParams& params, int step_index, std::string config_digest,
                                    bool normalize) {
    if (step_index < 0) {
        throw UsageError("ModelSnapshot: step_index must be >= 0");
    }
    if (!params.all_finite()) {
        throw UsageError("ModelSnapshot: parameters are not finite");
    }
    auto frozen = std::make_shared<EncoderParams>(params);
    for (Matrix* t : frozen->tensors()) {
        for (Eigen::Index i = 0; i < t->size(); ++i) {
            t->data()[i] = static_cast<double>(static_cast<float>(t->data()[i]));
        }
    }
    ModelSnapshot s;
    s.params_ = std::move(frozen);
    s.step_index_ = step_index;
    s.digest_ = std::move(config_digest);
    s.normalize_ = normalize;
    return s;
}

// Layout (little-endian): magic[8] | u32 version | u32 step | u32 hidden |
// u32 dim | u32 normalize | u32 digest_len | digest bytes | f32 tensors in
// declaration order, each row-major.
std::vector<unsigned char> serialize(const ModelSnapshot& snapshot) {
    std::vector<unsigned char> out(std::begin(kSnapshotMagic), std::end(kSnapshotMagic));
    put_u32(out, kSnapshotVersion);
    put_u32(out, static_cast<std::uint32_t>(snapshot.step_index()));
    put_u32(out, static_cast<std::uint32_t>(snapshot.hidden()));
    put_u32(out, static_cast<std::uint32_t>(snapshot.dim()));
    put_u32(out, snapshot.normalize() ? 1U : 0U);
    put_u32(out, static_cast<std::uint32_t>(snapshot.config_digest().size()));
    out.insert(out.end(), snapshot.config_digest().begin(), snapshot.config_digest().end());
    for (const Matrix* t : snapshot.params().tensors()) {
        for (Eigen::Index i = 0; i < t->size(); ++i) {
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t->data()[i])));
        }
    }
    return out;
}

ModelSnapshot deserialize(std::span<const unsigned char> bytes, const std::string& source) {
    Reader in(bytes, source);
    const auto magic = in.take(sizeof(kSnapshotMagic), "magic");
    if (std::memcmp(magic.data(), kSnapshotMagic, sizeof(kSnapshotMagic)) != 0) {
        in.fail("not a snapshot file (bad magic)");
    }
    const std::uint32_t version = in.u32("version");
    if (version != kSnapshotVersion) {
        in.fail("unsupported snapshot version " + std::to_string(version));
    }
    const std::uint32_t step = in.u32("step_index");
    const std::uint32_t hidden = in.u32("hidden");
    const std::uint32_t dim = in.u32("dim");
    const std::uint32_t normalize = in.u32("normalize");
    if (hidden == 0 || dim == 0 || hidden > 65536 || dim > 65536 || normalize > 1 || step > 1000000) {
        in.fail("implausible snapshot header");
    }
    const std::uint32_t digest_len = in.u32("digest length");
    const auto digest_bytes = in.take(digest_len, "digest");
    std::string digest(digest_bytes.begin(), digest_bytes.end());

    EncoderParams params = EncoderParams::zeros(static_cast<int>(hidden), static_cast<int>(dim));
    for (Matrix* t : params.tensors()) {
        for (Eigen::Index i = 0; i < t->size(); ++i) {
            t->data()[i] = static_cast<double>(std::bit_cast<float>(in.u32("tensor data")));
        }
    }
    if (!in.done()) {
        in.fail("trailing bytes after tensor data");
    }
    if (!params.all_finite()) {
        in.fail("non-finite parameter");
    }
    return ModelSnapshot::freeze(params, static_cast<int>(step), std::move(digest), normalize == 1);
}

void save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& file) {
    const auto bytes = serialize(snapshot);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IngestionError("cannot write snapshot " + file.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelSnapshot load_snapshot(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw IngestionError("missing snapshot file " + file.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes, file.string());
}

} // namespace kdf::nn
