#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "dmvfc/error.hpp"

namespace dmvfc::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        std::memcpy(&value, bytes, sizeof(T));
    }
    return value;
}

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

    template <typename T>
    void put(T value) {
        value = to_little(value);
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }

    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    BinaryReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

    void expect_magic(std::string_view tag) {
        std::string buf(tag.size(), '\0');
        in_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!in_ || buf != tag) throw ParseError(what_ + ": bad magic, expected \"" + std::string(tag) + "\"");
    }

    template <typename T>
    T get(const std::string& context = {}) {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        if (!in_) throw ParseError(what_ + ": truncated" + (context.empty() ? "" : " in " + context));
        return to_little(value);
    }

    std::string get_string(const std::string& context = {}) {
        auto n = get<std::uint32_t>(context);
        if (n > (1u << 20)) throw ParseError(what_ + ": implausible string length in " + context);
        std::string s(n, '\0');
        in_.read(s.data(), n);
        if (!in_) throw ParseError(what_ + ": truncated" + (context.empty() ? "" : " in " + context));
        return s;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& in_;
    std::string what_;
};

}  // namespace dmvfc::detail
