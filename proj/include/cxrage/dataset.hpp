#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cxrage/tensor.hpp"

namespace cxrage {

enum class ViewPosition { PA, AP, OTHER };
enum class ViewSelector { PA, AP, BOTH };

struct MetadataRecord {
    std::string image_index;
    std::string finding_labels;
    std::size_t follow_up = 0;
    std::string patient_id;
    std::size_t patient_age = 0;  // integer years
    std::string patient_gender;
    ViewPosition view_position = ViewPosition::OTHER;
    std::size_t width = 0;
    std::size_t height = 0;
    double pixel_spacing_x = 0.0;
    double pixel_spacing_y = 0.0;
};

// Expects a header row; columns may come in any order and fields may be
// quoted. Throws std::runtime_error naming the missing column or the
// offending row number (header = row 1).
std::vector<MetadataRecord> parse_metadata(const std::string& csv_text);

std::vector<MetadataRecord> filter_view(const std::vector<MetadataRecord>& records,
                                        ViewSelector selector);

// Drops records with patient_age strictly above max_age; order preserved.
std::vector<MetadataRecord> remove_age_outliers(const std::vector<MetadataRecord>& records,
                                                double max_age = 90.0);

double normalize_age(double age_years);
double denormalize_age(double y);

struct LabeledImage {
    Tensor<double> pixels;  // 1xHxW in [0,1]
    double age_years = 0.0;
    double age_normalized = 0.0;
    std::optional<MetadataRecord> record;  // absent for synthetic samples
};

LabeledImage labeled_from_record(const MetadataRecord& record, Tensor<double> pixels);

struct SplitDataset {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> val;
    std::uint64_t split_seed = 0;
    bool by_patient = true;
};

// Deterministic seeded shuffle; with by_patient every patient's images land
// on one side, with the val share as close to 1-ratio as group sizes allow.
// Images without records count as their own one-image group.
SplitDataset split(std::vector<LabeledImage> images, double ratio, std::uint64_t seed,
                   bool by_patient);

Tensor<double> bilinear_resize(const Tensor<double>& image, std::size_t out_h, std::size_t out_w);

// read_gray_image + bilinear resize to the target size.
Tensor<double> load_image(const std::string& path, std::size_t target_h, std::size_t target_w);

// Half-open pixel rectangle: rows [row0, row1), cols [col0, col1).
struct Rect {
    std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;
    std::size_t area() const { return (row1 - row0) * (col1 - col0); }
    bool contains(std::size_t r, std::size_t c) const {
        return r >= row0 && r < row1 && c >= col0 && c < col1;
    }
};

struct SyntheticSpec {
    std::size_t image_size = 0;
    std::size_t n_samples = 0;
    double noise_sigma = 0.0;
    Rect signal_region;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;
};

struct SyntheticDataset {
    std::vector<LabeledImage> images;
    Rect signal_region;
};

// Ages drawn Uniform[0,90); background pixels 0.5, signal-region pixels
// 0.1 + 0.8*(age/90), both plus N(0, noise_sigma) noise, clamped to [0,1].
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Writes synth_NNNNN.pgm files plus metadata.csv (ages rounded to whole
// years, view position "PA") into dir, creating it if needed.
void export_synthetic(const SyntheticDataset& dataset, const std::string& dir);

}  // namespace cxrage
