// SPDX-License-Identifier: Apache-2.0
#include "diffage/data.hpp"

#include <algorithm>
#include <cmath>

namespace diffage::data {

Eigen::Index medial_index(Eigen::Index depth) {
    if (depth < 1) throw DataError("volume has no slices along the axial axis");
    return depth / 2;
}

namespace {

Image slice_at(const Volume& v, int axis, Eigen::Index index) {
    const auto& d = v.dims;
    switch (axis) {
        case 0: {
            Image img(d[2], d[1]);
            for (Eigen::Index k = 0; k < d[2]; ++k)
                for (Eigen::Index j = 0; j < d[1]; ++j) img(k, j) = v.at(index, j, k);
            return img;
        }
        case 1: {
            Image img(d[2], d[0]);
            for (Eigen::Index k = 0; k < d[2]; ++k)
                for (Eigen::Index i = 0; i < d[0]; ++i) img(k, i) = v.at(i, index, k);
            return img;
        }
        default: {
            Image img(d[1], d[0]);
            for (Eigen::Index j = 0; j < d[1]; ++j)
                for (Eigen::Index i = 0; i < d[0]; ++i) img(j, i) = v.at(i, j, index);
            return img;
        }
    }
}

}  // namespace

Image extract_medial_slice(const Volume& volume) {
    const int axis = volume.axial_axis;
    if (axis < 0 || axis > 2) throw DataError("invalid axial axis");
    if (volume.voxels.size() != static_cast<std::size_t>(volume.dims[0] * volume.dims[1] * volume.dims[2])) {
        throw DataError("volume voxel count does not match its dimensions");
    }
    return slice_at(volume, axis, medial_index(volume.dims[axis]));
}

std::vector<Image> extract_medial_slices(const Volume& volume, int count) {
    if (count < 1) throw ConfigError("slice count must be positive");
    const int axis = volume.axial_axis;
    const auto depth = volume.dims[axis];
    const auto centre = medial_index(depth);
    if (count > depth) throw DataError("requested more slices than the volume holds");
    Eigen::Index first = std::clamp<Eigen::Index>(centre - count / 2, 0, depth - count);
    std::vector<Image> out;
    for (int s = 0; s < count; ++s) out.push_back(slice_at(volume, axis, first + s));
    return out;
}

Image resize_bilinear(const Image& src, Eigen::Index rows, Eigen::Index cols) {
    if (src.size() == 0 || rows < 1 || cols < 1) throw DataError("cannot resize an empty image");
    if (src.rows() == rows && src.cols() == cols) return src;
    Image out(rows, cols);
    const double sy = double(src.rows()) / double(rows);
    const double sx = double(src.cols()) / double(cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.rows() - 1));
        const auto y0 = static_cast<Eigen::Index>(std::floor(fy));
        const auto y1 = std::min(y0 + 1, src.rows() - 1);
        const double wy = fy - double(y0);
        for (Eigen::Index x = 0; x < cols; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.cols() - 1));
            const auto x0 = static_cast<Eigen::Index>(std::floor(fx));
            const auto x1 = std::min(x0 + 1, src.cols() - 1);
            const double wx = fx - double(x0);
            out(y, x) = (1 - wy) * ((1 - wx) * src(y0, x0) + wx * src(y0, x1)) + wy * ((1 - wx) * src(y1, x0) + wx * src(y1, x1));
        }
    }
    return out;
}

SliceImage normalize_and_resize(const Image& slice, int size) {
    if (size < 1) throw ConfigError("slice size must be positive");
    if (!slice.allFinite()) throw DataError("slice contains non-finite values");
    SliceImage out;
    out.pixels = resize_bilinear(slice, size, size);
    const double lo = out.pixels.minCoeff();
    const double hi = out.pixels.maxCoeff();
    if (hi - lo <= 0.0) {
        out.pixels.setZero();
        out.degenerate = true;
    } else {
        out.pixels = (out.pixels - lo) / (hi - lo);
    }
    return out;
}

std::vector<Image> load_images(const Manifest& manifest, const std::vector<SampleRecord>& records, int size) {
    std::vector<Image> images;
    images.reserve(records.size());
    for (const auto& r : records) {
        const auto path = manifest.resolve(r);
        const auto name = path.filename().string();
        const bool nifti = name.size() > 4 && (name.ends_with(".nii") || name.ends_with(".nii.gz"));
        Image img = nifti ? normalize_and_resize(extract_medial_slice(read_nifti(path)), size).pixels : read_png(path);
        if (img.rows() != size || img.cols() != size) img = resize_bilinear(img, size, size);
        images.push_back(std::move(img));
    }
    return images;
}

}  // namespace diffage::data
