#include "mmreg/mha_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mmreg {

std::string element_type_name(ElementType t)
{
    switch (t) {
    case ElementType::uchar: return "MET_UCHAR";
    case ElementType::int16: return "MET_SHORT";
    case ElementType::uint16: return "MET_USHORT";
    case ElementType::float32: return "MET_FLOAT";
    }
    return "?";
}

namespace {

static_assert(std::endian::native == std::endian::little, "MetaImage data is read as little-endian");

std::size_t element_size(ElementType t)
{
    switch (t) {
    case ElementType::uchar: return 1;
    case ElementType::int16:
    case ElementType::uint16: return 2;
    case ElementType::float32: return 4;
    }
    return 0;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value, std::size_t n)
{
    std::istringstream in(value);
    std::vector<T> out;
    T v{};
    while (in >> v) out.push_back(v);
    if (out.size() != n || !in.eof()) {
        throw MhaError("malformed header key '" + key + "': expected " + std::to_string(n) + " values, got '"
                       + value + "'");
    }
    return out;
}

bool is_false(const std::string& v) { return v == "False" || v == "false" || v == "0"; }

} // namespace

MhaImage read_mha(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MhaError("cannot open '" + path + "'");

    MhaImage img;
    bool have_object = false, have_ndims = false, have_dims = false, have_type = false, have_data = false;
    std::string line;
    int line_no = 0;
    while (!have_data && std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw MhaError("malformed header key at line " + std::to_string(line_no) + ": '" + t + "'");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key == "ObjectType") {
            if (value != "Image") throw MhaError("malformed header key 'ObjectType': unsupported '" + value + "'");
            have_object = true;
        }
        else if (key == "NDims") {
            if (value != "3") throw MhaError("malformed header key 'NDims': only 3 is supported, got '" + value + "'");
            have_ndims = true;
        }
        else if (key == "DimSize") {
            const auto d = parse_list<long long>(key, value, 3);
            if (std::any_of(d.begin(), d.end(), [](long long v) { return v <= 0 || v > (1LL << 30); })) {
                throw MhaError("malformed header key 'DimSize': '" + value + "'");
            }
            img.dims = {static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2])};
            have_dims = true;
        }
        else if (key == "ElementType") {
            if (value == "MET_UCHAR") img.element_type = ElementType::uchar;
            else if (value == "MET_SHORT") img.element_type = ElementType::int16;
            else if (value == "MET_USHORT") img.element_type = ElementType::uint16;
            else if (value == "MET_FLOAT") img.element_type = ElementType::float32;
            else throw MhaError("unsupported ElementType '" + value + "'");
            have_type = true;
        }
        else if (key == "ElementSpacing" || key == "ElementSize") {
            const auto s = parse_list<double>(key, value, 3);
            if (std::any_of(s.begin(), s.end(), [](double v) { return !(v > 0.0) || !std::isfinite(v); })) {
                throw MhaError("malformed header key '" + key + "': spacing must be positive");
            }
            if (key == "ElementSpacing") img.spacing = {s[0], s[1], s[2]};
        }
        else if (key == "Offset" || key == "Origin" || key == "Position") {
            const auto o = parse_list<double>(key, value, 3);
            img.origin = {o[0], o[1], o[2]};
        }
        else if (key == "ElementNumberOfChannels") {
            const auto c = parse_list<int>(key, value, 1);
            if (c[0] < 1) throw MhaError("malformed header key 'ElementNumberOfChannels': '" + value + "'");
            img.channels = c[0];
        }
        else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
            if (!is_false(value)) throw MhaError("malformed header key '" + key + "': big-endian data unsupported");
        }
        else if (key == "CompressedData") {
            if (!is_false(value)) throw MhaError("malformed header key 'CompressedData': compression unsupported");
        }
        else if (key == "BinaryData" || key == "TransformMatrix" || key == "CenterOfRotation"
                 || key == "AnatomicalOrientation") {
            // informational; geometry is axis-aligned here
        }
        else if (key == "ElementDataFile") {
            if (value != "LOCAL") throw MhaError("malformed header key 'ElementDataFile': only LOCAL is supported");
            have_data = true;
        }
        else {
            throw MhaError("malformed header key '" + key + "' at line " + std::to_string(line_no));
        }
    }
    if (!have_object) throw MhaError("malformed header: missing key 'ObjectType'");
    if (!have_ndims) throw MhaError("malformed header: missing key 'NDims'");
    if (!have_dims) throw MhaError("malformed header: missing key 'DimSize'");
    if (!have_type) throw MhaError("malformed header: missing key 'ElementType'");
    if (!have_data) throw MhaError("malformed header: missing key 'ElementDataFile'");

    const std::streamoff data_offset = in.tellg();
    const std::size_t n = img.dims.count() * static_cast<std::size_t>(img.channels);
    const std::size_t esize = element_size(img.element_type);
    std::vector<char> raw(n * esize);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != raw.size()) {
        throw MhaError("data length mismatch: expected " + std::to_string(raw.size()) + " bytes at offset "
                       + std::to_string(data_offset) + ", file ends after " + std::to_string(got));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw MhaError("data length mismatch: trailing bytes after offset "
                       + std::to_string(data_offset + static_cast<std::streamoff>(raw.size())));
    }

    img.values.resize(n);
    const char* p = raw.data();
    for (std::size_t i = 0; i < n; ++i, p += esize) {
        switch (img.element_type) {
        case ElementType::uchar: img.values[i] = static_cast<unsigned char>(*p); break;
        case ElementType::int16: {
            std::int16_t v;
            std::memcpy(&v, p, 2);
            img.values[i] = v;
            break;
        }
        case ElementType::uint16: {
            std::uint16_t v;
            std::memcpy(&v, p, 2);
            img.values[i] = v;
            break;
        }
        case ElementType::float32: {
            float v;
            std::memcpy(&v, p, 4);
            if (!std::isfinite(v)) {
                throw MhaError("non-finite voxel value at byte offset "
                               + std::to_string(data_offset + static_cast<std::streamoff>(i * 4)));
            }
            img.values[i] = v;
            break;
        }
        }
    }
    return img;
}

void write_mha(const std::string& path, const MhaImage& image)
{
    const std::size_t n = image.dims.count() * static_cast<std::size_t>(image.channels);
    if (image.values.size() != n) throw MhaError("data length mismatch while writing '" + path + "'");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw MhaError("cannot write '" + path + "'");
    std::ostringstream h;
    h.precision(17);
    h << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "DimSize = " << image.dims.x << ' ' << image.dims.y << ' ' << image.dims.z << '\n';
    if (image.channels != 1) h << "ElementNumberOfChannels = " << image.channels << '\n';
    h << "ElementType = " << element_type_name(image.element_type) << '\n'
      << "ElementSpacing = " << image.spacing[0] << ' ' << image.spacing[1] << ' ' << image.spacing[2] << '\n'
      << "Offset = " << image.origin[0] << ' ' << image.origin[1] << ' ' << image.origin[2] << '\n'
      << "ElementDataFile = LOCAL\n";
    out << h.str();

    const std::size_t esize = element_size(image.element_type);
    std::vector<char> raw(n * esize);
    char* p = raw.data();
    for (std::size_t i = 0; i < n; ++i, p += esize) {
        const double v = image.values[i];
        switch (image.element_type) {
        case ElementType::uchar: *p = static_cast<char>(static_cast<unsigned char>(v)); break;
        case ElementType::int16: {
            const auto s = static_cast<std::int16_t>(v);
            std::memcpy(p, &s, 2);
            break;
        }
        case ElementType::uint16: {
            const auto s = static_cast<std::uint16_t>(v);
            std::memcpy(p, &s, 2);
            break;
        }
        case ElementType::float32: {
            const auto f = static_cast<float>(v);
            std::memcpy(p, &f, 4);
            break;
        }
        }
    }
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw MhaError("I/O failure writing '" + path + "'");
}

Volume load_mha_volume(const std::string& path)
{
    MhaImage img = read_mha(path);
    if (img.channels != 1) throw MhaError("'" + path + "' has " + std::to_string(img.channels) + " channels, expected 1");
    Volume v(img.dims, img.spacing, img.origin);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(img.values[i]);
    return v;
}

LabelVolume load_mha_labels(const std::string& path)
{
    MhaImage img = read_mha(path);
    if (img.channels != 1) throw MhaError("'" + path + "' has " + std::to_string(img.channels) + " channels, expected 1");
    if (img.element_type == ElementType::float32) {
        throw MhaError("unsupported ElementType 'MET_FLOAT' for a label volume");
    }
    LabelVolume v(img.dims, img.spacing, img.origin);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (img.values[i] < 0) throw MhaError("negative label at voxel " + std::to_string(i));
        v.data[i] = static_cast<std::uint16_t>(img.values[i]);
    }
    return v;
}

void save_mha(const Volume& volume, const std::string& path)
{
    volume.validate();
    MhaImage img{volume.dims, volume.spacing, volume.origin, ElementType::float32, 1, {}};
    img.values.assign(volume.data.begin(), volume.data.end());
    write_mha(path, img);
}

void save_mha(const LabelVolume& labels, const std::string& path)
{
    labels.validate();
    const bool fits = std::all_of(labels.data.begin(), labels.data.end(), [](std::uint16_t v) { return v < 256; });
    MhaImage img{labels.dims, labels.spacing, labels.origin, fits ? ElementType::uchar : ElementType::uint16, 1, {}};
    img.values.assign(labels.data.begin(), labels.data.end());
    write_mha(path, img);
}

} // namespace mmreg
