#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

// Little-endian binary file plumbing shared by the motion and checkpoint
// formats. Each failure mode is a distinct, testable kind.

namespace ssdpose::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

class FileError : public std::runtime_error {
public:
    enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kMalformed };

    FileError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

class Writer {
public:
    explicit Writer(const std::string& path) : f_(path, std::ios::binary) {
        if (!f_) throw FileError(FileError::Kind::kIo, "cannot open for writing: " + path);
    }

    void bytes(const void* p, size_t n) {
        f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!f_) throw FileError(FileError::Kind::kIo, "write failed");
    }

    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }

    void f32_array(const float* p, size_t n) { bytes(p, n * 4); }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

private:
    std::ofstream f_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : f_(path, std::ios::binary) {
        if (!f_) throw FileError(FileError::Kind::kIo, "cannot open for reading: " + path);
    }

    void bytes(void* p, size_t n) {
        f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(f_.gcount()) != n) {
            throw FileError(FileError::Kind::kTruncated, "unexpected end of file");
        }
    }

    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }

    uint64_t u64() {
        uint64_t v;
        bytes(&v, 8);
        return v;
    }

    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }

    void f32_array(float* p, size_t n) { bytes(p, n * 4); }

    std::string str(uint32_t max_len = 1u << 20) {
        const uint32_t n = u32();
        if (n > max_len) throw FileError(FileError::Kind::kMalformed, "string length out of range");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

    void expect_magic(const char magic[4], const std::string& what) {
        char buf[4];
        bytes(buf, 4);
        if (std::memcmp(buf, magic, 4) != 0) {
            throw FileError(FileError::Kind::kBadMagic, what + ": bad magic");
        }
    }

    bool at_eof() {
        f_.peek();
        return f_.eof();
    }

private:
    std::ifstream f_;
};

}  // namespace ssdpose::io
