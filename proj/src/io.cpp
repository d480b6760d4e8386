#include "lapddpm/io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lapddpm::io {

namespace {

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void write_container(const std::filesystem::path& file, const Container& c) {
    if (c.magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");

    nlohmann::json header = c.header;
    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : c.tensors) {
        manifest.push_back({{"name", t.name},
                            {"rows", t.rows},
                            {"cols", t.cols},
                            {"dtype", t.dtype},
                            {"offset", offset},
                            {"nbytes", t.bytes.size()}});
        offset += t.bytes.size();
    }
    header["tensors"] = manifest;
    const std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), c.magic.begin(), c.magic.end());
    put_u64_le(out, hs.size());
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& t : c.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());

    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + file.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write failed: " + file.string());
}

Container read_container(const std::filesystem::path& file, const std::string& expected_magic) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + file.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());

    if (bytes.size() < 16) throw std::runtime_error("truncated container: " + file.string());
    Container c;
    c.magic.assign(bytes.begin(), bytes.begin() + 8);
    if (c.magic != expected_magic)
        throw std::runtime_error("bad magic in " + file.string() + ": expected " + expected_magic);

    const std::uint64_t hlen = get_u64_le(bytes.data() + 8);
    if (16 + hlen > bytes.size()) throw std::runtime_error("header overruns file: " + file.string());
    const std::string hs(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    try {
        c.header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed container header: " + std::string(e.what()));
    }

    const std::uint8_t* blob = bytes.data() + 16 + hlen;
    const std::uint64_t blob_size = bytes.size() - 16 - hlen;
    if (!c.header.contains("tensors") || !c.header["tensors"].is_array())
        throw std::runtime_error("container header missing tensor manifest");
    std::uint64_t expected_total = 0;
    for (const auto& e : c.header["tensors"]) {
        TensorBlob t;
        t.name = e.at("name").get<std::string>();
        t.rows = e.at("rows").get<std::int64_t>();
        t.cols = e.at("cols").get<std::int64_t>();
        t.dtype = e.at("dtype").get<std::string>();
        const std::uint64_t off = e.at("offset").get<std::uint64_t>();
        const std::uint64_t n = e.at("nbytes").get<std::uint64_t>();
        if (off + n > blob_size)
            throw std::runtime_error("tensor blob out of range: " + t.name);
        const std::size_t unit = t.dtype == "f64" ? 8 : 4;
        if (n != unit * static_cast<std::uint64_t>(t.rows) * static_cast<std::uint64_t>(t.cols))
            throw std::runtime_error("tensor blob length inconsistent with shape: " + t.name);
        t.bytes.assign(blob + off, blob + off + n);
        expected_total += n;
        c.tensors.push_back(std::move(t));
    }
    if (expected_total != blob_size)
        throw std::runtime_error("container blob section size mismatch");
    c.header.erase("tensors");
    return c;
}

TensorBlob encode_f64(const std::string& name, const Mat& m) {
    TensorBlob t{name, m.rows(), m.cols(), "f64", {}};
    t.bytes.resize(static_cast<std::size_t>(m.size()) * 8);
    std::size_t pos = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = m(r, c);
            std::memcpy(t.bytes.data() + pos, &v, 8);
            pos += 8;
        }
    return t;
}

TensorBlob encode_f32(const std::string& name, const Mat& m) {
    TensorBlob t{name, m.rows(), m.cols(), "f32", {}};
    t.bytes.resize(static_cast<std::size_t>(m.size()) * 4);
    std::size_t pos = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            float v = static_cast<float>(m(r, c));
            std::memcpy(t.bytes.data() + pos, &v, 4);
            pos += 4;
        }
    return t;
}

Mat decode_matrix(const TensorBlob& b) {
    Mat m(b.rows, b.cols);
    std::size_t pos = 0;
    if (b.dtype == "f64") {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v;
                std::memcpy(&v, b.bytes.data() + pos, 8);
                pos += 8;
                m(r, c) = v;
            }
    } else if (b.dtype == "f32") {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                float v;
                std::memcpy(&v, b.bytes.data() + pos, 4);
                pos += 4;
                m(r, c) = static_cast<double>(v);
            }
    } else {
        throw std::runtime_error("unknown tensor dtype: " + b.dtype);
    }
    return m;
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw std::runtime_error("cannot open: " + file.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

void write_lines(const std::filesystem::path& file, const std::vector<std::string>& lines) {
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + file.string());
    for (const auto& l : lines) f << l << '\n';
}

std::string read_file(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + file.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& file, const std::string& contents) {
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + file.string());
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::string fnv1a_hex(const std::filesystem::path& file) {
    const std::string bytes = read_file(file);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace lapddpm::io
