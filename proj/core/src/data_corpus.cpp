#include "kdf/data.hpp"

#include <bit>
#include <cmath>
#include <iterator>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace kdf::data {

namespace {

constexpr const char* kPosesHeader = "sample_id,x,y,scan_file";

std::string where(const std::filesystem::path& file, std::size_t line) {
    return file.string() + ":" + std::to_string(line);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

Matrix read_scan(const std::filesystem::path& file, const std::string& context) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw IngestionError(context + ": missing scan file " + file.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % 12 != 0) {
        throw IngestionError(context + ": scan file " + file.string() + " has " +
                             std::to_string(bytes.size()) + " bytes, not a positive multiple of 12");
    }
    const auto n = static_cast<Eigen::Index>(bytes.size() / 12);
    Matrix pts(n, 3);
    for (Eigen::Index i = 0; i < n * 3; ++i) {
        const auto* b = bytes.data() + 4 * i;
        const std::uint32_t word = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) |
                                   (static_cast<std::uint32_t>(b[3]) << 24);
        const float value = std::bit_cast<float>(word);
        if (!std::isfinite(value)) {
            throw IngestionError(context + ": scan file " + file.string() + " contains a non-finite value");
        }
        pts(i / 3, i % 3) = static_cast<double>(value);
    }
    return pts;
}

void write_scan(const std::filesystem::path& file, const Matrix& pts) {
    std::vector<unsigned char> bytes;
    bytes.reserve(static_cast<std::size_t>(pts.size()) * 4);
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
        for (Eigen::Index c = 0; c < 3; ++c) {
            const auto word = std::bit_cast<std::uint32_t>(static_cast<float>(pts(r, c)));
            for (int k = 0; k < 4; ++k) {
                bytes.push_back(static_cast<unsigned char>((word >> (8 * k)) & 0xffU));
            }
        }
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IngestionError("cannot write " + file.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

std::vector<PlaceSample> load_corpus(const std::filesystem::path& dir, const PairPolicy& policy,
                                     int domain_id) {
    policy.validate();
    const auto poses = dir / "poses.csv";
    std::ifstream in(poses);
    if (!in) {
        throw IngestionError("missing file " + poses.string());
    }
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) {
        throw IngestionError(where(poses, line_no) + ": empty file");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kPosesHeader) {
        throw IngestionError(where(poses, line_no) + ": expected header '" + kPosesHeader + "'");
    }

    std::vector<PlaceSample> out;
    std::set<std::int64_t> seen;
    Eigen::Index expected_points = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto ctx = where(poses, line_no);
        const auto fields = split_csv(line);
        if (fields.size() != 4) {
            throw IngestionError(ctx + ": expected 4 fields, got " + std::to_string(fields.size()));
        }
        PlaceSample s;
        double x = 0.0;
        double y = 0.0;
        if (!parse_number(fields[0], s.sample_id)) {
            throw IngestionError(ctx + ": malformed sample_id '" + fields[0] + "'");
        }
        if (!parse_number(fields[1], x) || !parse_number(fields[2], y) || !std::isfinite(x) ||
            !std::isfinite(y)) {
            throw IngestionError(ctx + ": malformed pose '" + fields[1] + "," + fields[2] + "'");
        }
        if (fields[3].empty()) {
            throw IngestionError(ctx + ": empty scan_file");
        }
        if (!seen.insert(s.sample_id).second) {
            throw IngestionError(ctx + ": duplicate sample_id " + fields[0]);
        }
        s.pose = Vec2(x, y);
        s.domain_id = domain_id;
        s.scan.points = read_scan(dir / fields[3], ctx);
        if (expected_points < 0) {
            expected_points = s.scan.points.rows();
        } else if (s.scan.points.rows() != expected_points) {
            throw IngestionError(ctx + ": scan file " + fields[3] + " has " +
                                 std::to_string(s.scan.points.rows()) + " points, corpus uses " +
                                 std::to_string(expected_points));
        }
        const double extent = s.scan.points.cwiseAbs().maxCoeff();
        if (extent > 1.0) {
            s.scan.points /= extent;
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_corpus(const std::filesystem::path& dir, std::span<const PlaceSample> samples) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "poses.csv", std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IngestionError("cannot write " + (dir / "poses.csv").string());
    }
    out << kPosesHeader << '\n';
    out << std::setprecision(17);
    for (const auto& s : samples) {
        const std::string name = "scan_" + std::to_string(s.sample_id) + ".f32";
        out << s.sample_id << ',' << s.pose.x() << ',' << s.pose.y() << ',' << name << '\n';
        write_scan(dir / name, s.scan.points);
    }
}

} // namespace kdf::data
