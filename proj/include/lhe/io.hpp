// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lhe/common.hpp"

namespace lhe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// f32le tensor files: raw little-endian float32, row-major. Double-precision
// values are narrowed on write; reads are exact images of the stored floats.
// ---------------------------------------------------------------------------

inline std::vector<float> to_f32(const Matrix& m) {
    std::vector<float> out(static_cast<std::size_t>(m.rows()) * static_cast<std::size_t>(m.cols()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[k++] = static_cast<float>(m(r, c));
    return out;
}

inline std::vector<float> to_f32(const Vector& v) {
    std::vector<float> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
    return out;
}

inline Matrix matrix_from_f32(const std::vector<float>& data, Eigen::Index rows, Eigen::Index cols) {
    require(static_cast<Eigen::Index>(data.size()) == rows * cols, ErrorKind::IntegrityError,
            "tensor size does not match declared shape");
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(data[k++]);
    return m;
}

inline Vector vector_from_f32(const std::vector<float>& data) {
    Vector v(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(data[i]);
    return v;
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t bytes) {
    std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        require(f.good(), ErrorKind::ParseFailure, "cannot open for writing: " + tmp.string());
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
        require(f.good(), ErrorKind::ParseFailure, "short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, text.data(), text.size());
}

inline void write_f32le(const std::filesystem::path& path, const std::vector<float>& data) {
    static_assert(sizeof(float) == 4);
    write_file_atomic(path, data.data(), data.size() * sizeof(float));
}

inline std::vector<float> read_f32le(const std::filesystem::path& path, std::size_t expected_count) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::MissingArtifact, "missing tensor file: " + path.string());
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(f.tellg());
    require(bytes == expected_count * sizeof(float), ErrorKind::IntegrityError,
            "tensor file " + path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                std::to_string(expected_count * sizeof(float)));
    f.seekg(0, std::ios::beg);
    std::vector<float> data(expected_count);
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    require(f.good(), ErrorKind::IntegrityError, "short read: " + path.string());
    return data;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::MissingArtifact, "missing file: " + path.string());
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

// Stable numeric formatting for reports (reruns must be byte-identical).
inline std::string format_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// base64 (for tensor payloads on the wire)
// ---------------------------------------------------------------------------

inline std::string base64_encode(const void* data, std::size_t len) {
    static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    const auto* p = static_cast<const unsigned char*>(data);
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        std::uint32_t chunk = std::uint32_t(p[i]) << 16;
        if (i + 1 < len) chunk |= std::uint32_t(p[i + 1]) << 8;
        if (i + 2 < len) chunk |= std::uint32_t(p[i + 2]);
        out.push_back(tbl[(chunk >> 18) & 63]);
        out.push_back(tbl[(chunk >> 12) & 63]);
        out.push_back(i + 1 < len ? tbl[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? tbl[chunk & 63] : '=');
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t chunk = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = val(c);
        require(v >= 0, ErrorKind::ParseFailure, "invalid base64 input");
        chunk = (chunk << 6) | std::uint32_t(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((chunk >> bits) & 0xff));
        }
    }
    return out;
}

inline std::string base64_encode_f32(const std::vector<float>& v) {
    return base64_encode(v.data(), v.size() * sizeof(float));
}

inline std::vector<float> base64_decode_f32(std::string_view text) {
    const auto raw = base64_decode(text);
    require(raw.size() % sizeof(float) == 0, ErrorKind::ParseFailure, "payload not a float32 array");
    std::vector<float> out(raw.size() / sizeof(float));
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

// ---------------------------------------------------------------------------
// SHA-256 (content hashes for run manifests)
// ---------------------------------------------------------------------------

class Sha256 {
public:
    Sha256() { reset(); }

    void reset() {
        h_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
              0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
        buf_len_ = 0;
        total_ = 0;
    }

    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        total_ += len;
        while (len > 0) {
            const std::size_t take = std::min<std::size_t>(64 - buf_len_, len);
            std::memcpy(buf_ + buf_len_, p, take);
            buf_len_ += take;
            p += take;
            len -= take;
            if (buf_len_ == 64) {
                process(buf_);
                buf_len_ = 0;
            }
        }
    }

    std::string hex_digest() {
        unsigned char tail[72];
        std::size_t n = 0;
        tail[n++] = 0x80;
        std::size_t pad = (buf_len_ + 1 + 8 <= 64) ? (64 - buf_len_ - 1 - 8) : (128 - buf_len_ - 1 - 8);
        while (pad--) tail[n++] = 0;
        const std::uint64_t bits = total_ * 8;
        for (int i = 7; i >= 0; --i) tail[n++] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        update_final(tail, n);
        char out[65];
        for (int i = 0; i < 8; ++i) std::snprintf(out + i * 8, 9, "%08x", h_[static_cast<std::size_t>(i)]);
        return std::string(out, 64);
    }

    static std::string of_string(std::string_view s) {
        Sha256 h;
        h.update(s.data(), s.size());
        return h.hex_digest();
    }

    static std::string of_file(const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        require(f.good(), ErrorKind::MissingArtifact, "cannot hash missing file: " + p.string());
        Sha256 h;
        char chunk[8192];
        while (f.read(chunk, sizeof(chunk)) || f.gcount() > 0) h.update(chunk, static_cast<std::size_t>(f.gcount()));
        return h.hex_digest();
    }

private:
    void update_final(const unsigned char* data, std::size_t len) {
        // len is a multiple of 64 after padding
        std::size_t off = 0;
        if (buf_len_ > 0) {
            std::memcpy(buf_ + buf_len_, data, 64 - buf_len_);
            process(buf_);
            off = 64 - buf_len_;
            buf_len_ = 0;
        }
        for (; off + 64 <= len; off += 64) process(data + off);
    }

    static std::uint32_t rotr(std::uint32_t v, int k) { return (v >> k) | (v << (32 - k)); }

    void process(const unsigned char* block) {
        static const std::uint32_t K[64] = {
            0x428a2f98u, 0x71374491u, 0xb5c0fbcfu, 0xe9b5dba5u, 0x3956c25bu, 0x59f111f1u, 0x923f82a4u, 0xab1c5ed5u,
            0xd807aa98u, 0x12835b01u, 0x243185beu, 0x550c7dc3u, 0x72be5d74u, 0x80deb1feu, 0x9bdc06a7u, 0xc19bf174u,
            0xe49b69c1u, 0xefbe4786u, 0x0fc19dc6u, 0x240ca1ccu, 0x2de92c6fu, 0x4a7484aau, 0x5cb0a9dcu, 0x76f988dau,
            0x983e5152u, 0xa831c66du, 0xb00327c8u, 0xbf597fc7u, 0xc6e00bf3u, 0xd5a79147u, 0x06ca6351u, 0x14292967u,
            0x27b70a85u, 0x2e1b2138u, 0x4d2c6dfcu, 0x53380d13u, 0x650a7354u, 0x766a0abbu, 0x81c2c92eu, 0x92722c85u,
            0xa2bfe8a1u, 0xa81a664bu, 0xc24b8b70u, 0xc76c51a3u, 0xd192e819u, 0xd6990624u, 0xf40e3585u, 0x106aa070u,
            0x19a4c116u, 0x1e376c08u, 0x2748774cu, 0x34b0bcb5u, 0x391c0cb3u, 0x4ed8aa4au, 0x5b9cca4fu, 0x682e6ff3u,
            0x748f82eeu, 0x78a5636fu, 0x84c87814u, 0x8cc70208u, 0x90befffau, 0xa4506cebu, 0xbef9a3f7u, 0xc67178f2u};
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(block[i * 4]) << 24) | (std::uint32_t(block[i * 4 + 1]) << 16) |
                   (std::uint32_t(block[i * 4 + 2]) << 8) | std::uint32_t(block[i * 4 + 3]);
        for (int i = 16; i < 64; ++i) {
            const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        auto a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4], f = h_[5], g = h_[6], h = h_[7];
        for (int i = 0; i < 64; ++i) {
            const std::uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const std::uint32_t ch = (e & f) ^ (~e & g);
            const std::uint32_t t1 = h + S1 + ch + K[i] + w[i];
            const std::uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const std::uint32_t mj = (a & b) ^ (a & c) ^ (b & c);
            const std::uint32_t t2 = S0 + mj;
            h = g; g = f; f = e; e = d + t1;
            d = c; c = b; b = a; a = t1 + t2;
        }
        h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d;
        h_[4] += e; h_[5] += f; h_[6] += g; h_[7] += h;
    }

    std::array<std::uint32_t, 8> h_{};
    unsigned char buf_[64]{};
    std::size_t buf_len_ = 0;
    std::uint64_t total_ = 0;
};

}  // namespace lhe
