// SPDX-License-Identifier: Apache-2.0
#include "diffage/data.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

namespace diffage::data {

namespace {

constexpr int kNiftiHeaderSize = 348;

struct GzCloser {
    void operator()(gzFile f) const {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

template <typename T>
T read_field(const unsigned char* hdr, int offset, bool swap) {
    T value;
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, hdr + offset, sizeof(T));
    if (swap) std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

template <typename T>
void write_field(unsigned char* hdr, int offset, T value) {
    std::memcpy(hdr + offset, &value, sizeof(T));
}

template <typename T>
void convert(const std::vector<unsigned char>& raw, bool swap, std::vector<float>& out) {
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, raw.data() + i * sizeof(T), sizeof(T));
        if (swap) std::reverse(bytes, bytes + sizeof(T));
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        out[i] = static_cast<float>(v);
    }
}

int dominant_axis(const double row[3]) {
    int best = 0;
    for (int j = 1; j < 3; ++j)
        if (std::abs(row[j]) > std::abs(row[best])) best = j;
    return best;
}

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
    GzHandle file(gzopen(path.c_str(), "rb"));
    if (!file) throw DataError("cannot open " + path.string());
    unsigned char hdr[kNiftiHeaderSize];
    if (gzread(file.get(), hdr, kNiftiHeaderSize) != kNiftiHeaderSize) throw DataError(path.string() + ": truncated NIfTI header");

    bool swap = false;
    std::int32_t sizeof_hdr = read_field<std::int32_t>(hdr, 0, false);
    if (sizeof_hdr != kNiftiHeaderSize) {
        swap = true;
        sizeof_hdr = read_field<std::int32_t>(hdr, 0, true);
        if (sizeof_hdr != kNiftiHeaderSize) throw DataError(path.string() + ": not a NIfTI-1 file");
    }
    if (std::memcmp(hdr + 344, "n+1", 4) != 0 && std::memcmp(hdr + 344, "ni1", 4) != 0) {
        throw DataError(path.string() + ": bad NIfTI magic");
    }
    if (std::memcmp(hdr + 344, "ni1", 4) == 0) throw DataError(path.string() + ": split header/image pairs are not supported");

    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = read_field<std::int16_t>(hdr, 40 + 2 * i, swap);
    if (dim[0] < 2 || dim[0] > 7) throw DataError(path.string() + ": invalid dimension count");
    Volume vol;
    for (int a = 0; a < 3; ++a) vol.dims[a] = (a < dim[0]) ? std::max<Eigen::Index>(dim[a + 1], 1) : 1;
    if (dim[1] <= 0 || dim[2] <= 0) throw DataError(path.string() + ": empty volume");

    const auto datatype = read_field<std::int16_t>(hdr, 70, swap);
    const float vox_offset = read_field<float>(hdr, 108, swap);
    const float slope = read_field<float>(hdr, 112, swap);
    const float inter = read_field<float>(hdr, 116, swap);

    std::size_t bytes_per = 0;
    switch (datatype) {
        case 2: case 256: bytes_per = 1; break;
        case 4: case 512: bytes_per = 2; break;
        case 8: case 16: case 768: bytes_per = 4; break;
        case 64: bytes_per = 8; break;
        default: throw DataError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
    }

    const std::size_t count = static_cast<std::size_t>(vol.dims[0] * vol.dims[1] * vol.dims[2]);
    const long skip = static_cast<long>(vox_offset) - kNiftiHeaderSize;
    if (skip > 0 && gzseek(file.get(), skip, SEEK_CUR) < 0) throw DataError(path.string() + ": bad vox_offset");
    std::vector<unsigned char> raw(count * bytes_per);
    const auto got = gzread(file.get(), raw.data(), static_cast<unsigned>(raw.size()));
    if (got < 0 || static_cast<std::size_t>(got) != raw.size()) throw DataError(path.string() + ": truncated voxel data");

    vol.voxels.resize(count);
    switch (datatype) {
        case 2: convert<std::uint8_t>(raw, swap, vol.voxels); break;
        case 256: convert<std::int8_t>(raw, swap, vol.voxels); break;
        case 4: convert<std::int16_t>(raw, swap, vol.voxels); break;
        case 512: convert<std::uint16_t>(raw, swap, vol.voxels); break;
        case 8: convert<std::int32_t>(raw, swap, vol.voxels); break;
        case 768: convert<std::uint32_t>(raw, swap, vol.voxels); break;
        case 16: convert<float>(raw, swap, vol.voxels); break;
        case 64: convert<double>(raw, swap, vol.voxels); break;
    }
    if (slope != 0.0f && std::isfinite(slope) && (slope != 1.0f || inter != 0.0f)) {
        for (auto& v : vol.voxels) v = v * slope + inter;
    }

    const auto qform_code = read_field<std::int16_t>(hdr, 252, swap);
    const auto sform_code = read_field<std::int16_t>(hdr, 254, swap);
    if (sform_code > 0) {
        double z_row[3];
        for (int j = 0; j < 3; ++j) z_row[j] = read_field<float>(hdr, 312 + 4 * j, swap);
        vol.axial_axis = dominant_axis(z_row);
    } else if (qform_code > 0) {
        const double b = read_field<float>(hdr, 256, swap);
        const double c = read_field<float>(hdr, 260, swap);
        const double d = read_field<float>(hdr, 264, swap);
        const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
        const double qfac = read_field<float>(hdr, 76, swap) < 0 ? -1.0 : 1.0;
        double z_row[3] = {2 * (b * d - a * c), 2 * (c * d + a * b), (a * a + d * d - c * c - b * b) * qfac};
        for (int j = 0; j < 3; ++j) z_row[j] *= std::abs(read_field<float>(hdr, 80 + 4 * j, swap));
        vol.axial_axis = dominant_axis(z_row);
    }
    return vol;
}

void write_nifti(const std::filesystem::path& path, const Volume& volume) {
    const bool compress = path.extension() == ".gz";
    GzHandle file(gzopen(path.c_str(), compress ? "wb6" : "wbT"));
    if (!file) throw DataError("cannot write " + path.string());
    unsigned char hdr[kNiftiHeaderSize + 4] = {};
    write_field<std::int32_t>(hdr, 0, kNiftiHeaderSize);
    write_field<std::int16_t>(hdr, 40, 3);
    for (int a = 0; a < 3; ++a) write_field<std::int16_t>(hdr, 42 + 2 * a, static_cast<std::int16_t>(volume.dims[a]));
    for (int a = 3; a < 7; ++a) write_field<std::int16_t>(hdr, 42 + 2 * a, 1);
    write_field<std::int16_t>(hdr, 70, 16);
    write_field<std::int16_t>(hdr, 72, 32);
    for (int a = 0; a < 4; ++a) write_field<float>(hdr, 76 + 4 * a, 1.0f);
    write_field<float>(hdr, 108, static_cast<float>(kNiftiHeaderSize + 4));
    write_field<float>(hdr, 112, 1.0f);
    write_field<std::int16_t>(hdr, 254, 1);
    // Axis `axial_axis` maps to world z; the other two fill x then y.
    int other = 0;
    for (int a = 0; a < 3; ++a) {
        const int row = (a == volume.axial_axis) ? 2 : other++;
        write_field<float>(hdr, 280 + 16 * row + 4 * a, 1.0f);
    }
    std::memcpy(hdr + 344, "n+1", 4);
    gzwrite(file.get(), hdr, sizeof hdr);
    gzwrite(file.get(), volume.voxels.data(), static_cast<unsigned>(volume.voxels.size() * sizeof(float)));
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw DataError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng initialisation failed");
    }
    std::vector<png_byte> buffer;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    int depth = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path.string() + ": invalid PNG");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_PALETTE || (color & PNG_COLOR_MASK_COLOR)) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    const auto stride = png_get_rowbytes(png, info);
    buffer.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(height, width);
    const double maxval = depth == 16 ? 65535.0 : 255.0;
    for (png_uint_32 y = 0; y < height; ++y) {
        for (png_uint_32 x = 0; x < width; ++x) {
            const double v = depth == 16 ? double((rows[y][2 * x] << 8) | rows[y][2 * x + 1]) : double(rows[y][x]);
            img(y, x) = v / maxval;
        }
    }
    return img;
}

void write_png16(const std::filesystem::path& path, const Image& pixels) {
    const auto height = static_cast<png_uint_32>(pixels.rows());
    const auto width = static_cast<png_uint_32>(pixels.cols());
    std::vector<png_byte> buffer(std::size_t(width) * height * 2);
    for (png_uint_32 y = 0; y < height; ++y) {
        for (png_uint_32 x = 0; x < width; ++x) {
            const double v = std::clamp(pixels(y, x), 0.0, 1.0);
            const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
            buffer[(std::size_t(y) * width + x) * 2] = static_cast<png_byte>(q >> 8);
            buffer[(std::size_t(y) * width + x) * 2 + 1] = static_cast<png_byte>(q & 0xFF);
        }
    }
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + std::size_t(y) * width * 2;

    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace diffage::data
