#include "arfc/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace arfc {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'R', 'F', 'C'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 3 + 16;

template <typename U>
void put_le(std::ostream& os, U value)
{
    std::array<unsigned char, sizeof(U)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes.begin(), bytes.end());
    os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename U>
U get_le(const unsigned char* p)
{
    std::array<unsigned char, sizeof(U)> bytes{};
    std::memcpy(bytes.data(), p, sizeof(U));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes.begin(), bytes.end());
    U value;
    std::memcpy(&value, bytes.data(), sizeof(U));
    return value;
}

struct Header {
    DType dtype;
    Shape shape;
};

Header read_header(std::istream& is)
{
    std::array<unsigned char, kHeaderSize> buf{};
    is.read(reinterpret_cast<char*>(buf.data()), buf.size());
    const auto got = static_cast<std::size_t>(is.gcount());
    if (got < 4 || std::memcmp(buf.data(), kMagic.data(), 4) != 0)
        throw ParseError("raw tensor: bad magic at byte 0");
    if (got < kHeaderSize)
        throw ParseError("raw tensor: header truncated at byte " + std::to_string(got));
    if (buf[4] != kVersion)
        throw ParseError("raw tensor: unsupported version " + std::to_string(buf[4]) + " at byte 4");
    if (buf[5] > 1)
        throw ParseError("raw tensor: unknown dtype " + std::to_string(buf[5]) + " at byte 5");
    if (buf[6] != 4)
        throw ParseError("raw tensor: ndim must be 4, found " + std::to_string(buf[6]) + " at byte 6");
    Header h;
    h.dtype = static_cast<DType>(buf[5]);
    std::array<std::uint32_t, 4> dims{};
    for (int i = 0; i < 4; ++i) {
        dims[i] = get_le<std::uint32_t>(buf.data() + 7 + 4 * i);
        if (dims[i] > (1u << 30))
            throw ParseError("raw tensor: implausible extent at byte " + std::to_string(7 + 4 * i));
    }
    h.shape = {static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
               static_cast<int>(dims[3])};
    return h;
}

template <typename T, typename Stored>
Tensor<T> read_payload(std::istream& is, const Shape& shape)
{
    const std::size_t count = shape.numel();
    std::vector<unsigned char> bytes(count * sizeof(Stored));
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    const auto got = static_cast<std::size_t>(is.gcount());
    if (got != bytes.size())
        throw ParseError("raw tensor: payload truncated at byte " + std::to_string(kHeaderSize + got));
    std::vector<T> values(count);
    for (std::size_t i = 0; i < count; ++i)
        values[i] = static_cast<T>(get_le<Stored>(bytes.data() + i * sizeof(Stored)));
    return Tensor<T>(shape, std::move(values));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t)
{
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint8_t>(os, kVersion);
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
    put_le<std::uint8_t>(os, 4);
    const Shape& s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w})
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (T v : t.data())
        put_le<T>(os, v);
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
    if (!os)
        throw std::runtime_error("write failed for " + path.string());
}

template <typename T>
Tensor<T> read_tensor(std::istream& is)
{
    const Header h = read_header(is);
    if (h.dtype == DType::f32)
        return read_payload<T, float>(is, h.shape);
    return read_payload<T, double>(is, h.shape);
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ParseError("cannot open " + path.string());
    return read_tensor<T>(is);
}

DType peek_dtype(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ParseError("cannot open " + path.string());
    return read_header(is).dtype;
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template void write_tensor(const std::filesystem::path&, const Tensor<float>&);
template void write_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template Tensor<float> read_tensor(const std::filesystem::path&);
template Tensor<double> read_tensor(const std::filesystem::path&);

}  // namespace arfc
