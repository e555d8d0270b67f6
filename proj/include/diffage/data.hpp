// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/errors.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace diffage::data {

/// Grayscale image, rows = y, cols = x, row-major so it flattens in raster order.
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kSliceSize = 128;

enum class Cohort { train, test, patient };

std::string to_string(Cohort c);
Cohort parse_cohort(const std::string& text);

struct SampleRecord {
    std::string id;
    std::filesystem::path image_path;
    std::optional<double> age_years;
    Cohort cohort = Cohort::train;
    std::optional<double> survival_months;
};

struct Manifest {
    std::vector<SampleRecord> records;
    std::map<Cohort, int> counts;
    /// Relative image paths resolve against this directory.
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const SampleRecord& r) const {
        return r.image_path.is_absolute() ? r.image_path : base_dir / r.image_path;
    }
    std::vector<SampleRecord> cohort(Cohort c) const;
    const SampleRecord* find(const std::string& id) const;
};

inline constexpr const char* kManifestHeader = "id,image_path,age_years,cohort,survival_months";

/// Parses and validates a manifest. Row errors carry line numbers and are
/// reported together; so are missing image files when `check_files` is set.
Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

/// 3D intensity volume, x fastest.
struct Volume {
    std::array<Eigen::Index, 3> dims{0, 0, 0};
    std::vector<float> voxels;
    /// Axis (0, 1 or 2) running inferior-superior.
    int axial_axis = 2;

    float at(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
        return voxels[static_cast<std::size_t>((k * dims[1] + j) * dims[0] + i)];
    }
};

/// Reads NIfTI-1 (.nii or .nii.gz). The axial axis comes from the sform or
/// qform orientation; without either it defaults to the third axis.
Volume read_nifti(const std::filesystem::path& path);
void write_nifti(const std::filesystem::path& path, const Volume& volume);

Eigen::Index medial_index(Eigen::Index depth);

/// Slice at floor(depth / 2) along the axial axis.
Image extract_medial_slice(const Volume& volume);

/// `count` neighbouring slices centred on the medial index.
std::vector<Image> extract_medial_slices(const Volume& volume, int count);

/// Bilinear resampling with half-pixel centres and edge clamping.
Image resize_bilinear(const Image& src, Eigen::Index rows, Eigen::Index cols);

struct SliceImage {
    Image pixels;
    std::string source_id;
    int slice_index = 0;
    /// Input was constant, so min-max scaling degenerated to all zeros.
    bool degenerate = false;
};

/// Resize to size x size, then min-max scale to [0, 1].
SliceImage normalize_and_resize(const Image& slice, int size = kSliceSize);

Image read_png(const std::filesystem::path& path);
/// 16-bit grayscale PNG; values clamped to [0, 1].
void write_png16(const std::filesystem::path& path, const Image& pixels);

/// Loads each record's image at `size` x `size`, resampling when needed.
std::vector<Image> load_images(const Manifest& manifest, const std::vector<SampleRecord>& records, int size);

struct SynthOptions {
    int n = 100;
    std::uint64_t seed = 7;
    double age_min = 20.0;
    double age_max = 90.0;
    int image_size = kSliceSize;
    double unlabeled_fraction = 0.2;
    /// Extra fully labeled held-out records in the test cohort.
    int n_test = 0;
    double noise_std = 0.02;
};

struct SynthSubject {
    SampleRecord record;
    double true_age = 0.0;
    Image image;
};

/// Phantom geometry as a function of age in years.
struct PhantomGeometry {
    double ventricle_radius;
    double cortical_thickness;
};
PhantomGeometry phantom_geometry(double age, double age_min, double age_max);

/// Aging phantoms: concentric smoothed ellipses whose central ventricle grows
/// and cortical band thins with age, plus pixel noise. Fully seeded.
std::vector<SynthSubject> synth_generate(const SynthOptions& options);

/// Writes images/<id>.png, manifest.csv and truth.csv (true ages of every subject).
std::vector<std::filesystem::path> write_synth_dataset(const std::filesystem::path& out_dir,
                                                       const std::vector<SynthSubject>& subjects);

}  // namespace diffage::data
