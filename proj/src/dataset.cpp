#include "cxrage/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "cxrage/fsutil.hpp"
#include "cxrage/image_io.hpp"

namespace cxrage {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool parse_uint(const std::string& raw, std::size_t& out) {
    const std::string s = trim(raw);
    if (s.empty()) return false;
    std::size_t v = 0;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    out = v;
    return true;
}

bool parse_real(const std::string& raw, double& out) {
    const std::string s = trim(raw);
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                in_quotes = true;
                break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
                [[fallthrough]];
            case '\n':
                row.push_back(std::move(field));
                field.clear();
                if (row.size() > 1 || !row[0].empty()) rows.push_back(std::move(row));
                row.clear();
                break;
            default:
                field += c;
        }
    }
    if (!field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        if (row.size() > 1 || !row[0].empty()) rows.push_back(std::move(row));
    }
    return rows;
}

[[noreturn]] void row_error(std::size_t row, const std::string& what) {
    throw std::runtime_error("metadata CSV row " + std::to_string(row) + ": " + what);
}

void fisher_yates(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace

std::vector<MetadataRecord> parse_metadata(const std::string& csv_text) {
    const std::vector<std::vector<std::string>> rows = parse_csv(csv_text);
    if (rows.empty()) throw std::runtime_error("metadata CSV: missing header row");

    static const char* kColumns[] = {
        "Image Index",        "Finding Labels",
        "Follow-up #",        "Patient ID",
        "Patient Age",        "Patient Gender",
        "View Position",      "OriginalImageWidth",
        "OriginalImageHeight", "OriginalImagePixelSpacing_x",
        "OriginalImagePixelSpacing_y"};
    std::unordered_map<std::string, std::size_t> header;
    for (std::size_t i = 0; i < rows[0].size(); ++i) header.emplace(trim(rows[0][i]), i);
    std::size_t col[11];
    for (std::size_t i = 0; i < 11; ++i) {
        const auto it = header.find(kColumns[i]);
        if (it == header.end())
            throw std::runtime_error(std::string("metadata CSV: missing required column '") +
                                     kColumns[i] + "'");
        col[i] = it->second;
    }

    std::vector<MetadataRecord> records;
    records.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const std::vector<std::string>& row = rows[r];
        const std::size_t row_no = r + 1;
        if (row.size() != rows[0].size())
            row_error(row_no, "has " + std::to_string(row.size()) + " fields, expected " +
                                  std::to_string(rows[0].size()));
        MetadataRecord rec;
        rec.image_index = trim(row[col[0]]);
        if (rec.image_index.empty()) row_error(row_no, "empty Image Index");
        rec.finding_labels = row[col[1]];
        if (!parse_uint(row[col[2]], rec.follow_up))
            row_error(row_no, "bad Follow-up # '" + row[col[2]] + "'");
        rec.patient_id = trim(row[col[3]]);
        if (!parse_uint(row[col[4]], rec.patient_age))
            row_error(row_no, "bad Patient Age '" + row[col[4]] + "'");
        rec.patient_gender = trim(row[col[5]]);
        const std::string view = trim(row[col[6]]);
        rec.view_position = view == "PA"   ? ViewPosition::PA
                            : view == "AP" ? ViewPosition::AP
                                           : ViewPosition::OTHER;
        if (!parse_uint(row[col[7]], rec.width) || rec.width == 0)
            row_error(row_no, "bad OriginalImageWidth '" + row[col[7]] + "'");
        if (!parse_uint(row[col[8]], rec.height) || rec.height == 0)
            row_error(row_no, "bad OriginalImageHeight '" + row[col[8]] + "'");
        if (!parse_real(row[col[9]], rec.pixel_spacing_x))
            row_error(row_no, "bad OriginalImagePixelSpacing_x '" + row[col[9]] + "'");
        if (!parse_real(row[col[10]], rec.pixel_spacing_y))
            row_error(row_no, "bad OriginalImagePixelSpacing_y '" + row[col[10]] + "'");
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<MetadataRecord> filter_view(const std::vector<MetadataRecord>& records,
                                        ViewSelector selector) {
    std::vector<MetadataRecord> out;
    for (const MetadataRecord& r : records) {
        const bool keep = (selector == ViewSelector::PA && r.view_position == ViewPosition::PA) ||
                          (selector == ViewSelector::AP && r.view_position == ViewPosition::AP) ||
                          (selector == ViewSelector::BOTH &&
                           r.view_position != ViewPosition::OTHER);
        if (keep) out.push_back(r);
    }
    return out;
}

std::vector<MetadataRecord> remove_age_outliers(const std::vector<MetadataRecord>& records,
                                                double max_age) {
    if (!(max_age > 0.0)) throw std::invalid_argument("remove_age_outliers: max_age must be > 0");
    std::vector<MetadataRecord> out;
    for (const MetadataRecord& r : records)
        if (!(static_cast<double>(r.patient_age) > max_age)) out.push_back(r);
    return out;
}

double normalize_age(double age_years) {
    if (!(age_years >= 0.0) || !(age_years <= 90.0))
        throw std::invalid_argument("normalize_age: age " + std::to_string(age_years) +
                                    " outside [0, 90]");
    return age_years / 90.0;
}

double denormalize_age(double y) {
    if (!(y >= 0.0) || !(y <= 1.0))
        throw std::invalid_argument("denormalize_age: value " + std::to_string(y) +
                                    " outside [0, 1]");
    return y * 90.0;
}

LabeledImage labeled_from_record(const MetadataRecord& record, Tensor<double> pixels) {
    LabeledImage img;
    img.pixels = std::move(pixels);
    img.age_years = static_cast<double>(record.patient_age);
    img.age_normalized = normalize_age(img.age_years);
    img.record = record;
    return img;
}

SplitDataset split(std::vector<LabeledImage> images, double ratio, std::uint64_t seed,
                   bool by_patient) {
    if (images.size() < 2)
        throw std::invalid_argument("split: need at least 2 images, got " +
                                    std::to_string(images.size()));
    if (!(ratio > 0.0) || !(ratio < 1.0))
        throw std::invalid_argument("split: ratio must lie strictly between 0 and 1");

    const std::size_t total = images.size();
    const auto n_train =
        static_cast<std::size_t>(std::lround(ratio * static_cast<double>(total)));
    std::mt19937_64 rng(seed);

    SplitDataset out;
    out.split_seed = seed;
    out.by_patient = by_patient;

    if (!by_patient) {
        std::vector<std::size_t> order(total);
        for (std::size_t i = 0; i < total; ++i) order[i] = i;
        fisher_yates(order, rng);
        for (std::size_t i = 0; i < total; ++i) {
            auto& side = i < n_train ? out.train : out.val;
            side.push_back(std::move(images[order[i]]));
        }
        return out;
    }

    std::unordered_map<std::string, std::size_t> group_of;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < total; ++i) {
        const std::string key = images[i].record.has_value()
                                    ? "p:" + images[i].record->patient_id
                                    : "i:" + std::to_string(i);
        const auto [it, fresh] = group_of.emplace(key, groups.size());
        if (fresh) groups.emplace_back();
        groups[it->second].push_back(i);
    }

    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    fisher_yates(order, rng);

    const std::size_t target_val = total - n_train;
    std::size_t val_count = 0;
    const auto dist = [&](std::size_t count) {
        return count > target_val ? count - target_val : target_val - count;
    };
    for (std::size_t gi : order) {
        const std::vector<std::size_t>& members = groups[gi];
        const bool to_val = dist(val_count + members.size()) < dist(val_count);
        auto& side = to_val ? out.val : out.train;
        for (std::size_t i : members) side.push_back(std::move(images[i]));
        if (to_val) val_count += members.size();
    }
    return out;
}

Tensor<double> bilinear_resize(const Tensor<double>& image, std::size_t out_h, std::size_t out_w) {
    if (image.rank() != 3 || image.shape[0] != 1)
        throw std::invalid_argument("bilinear_resize: need a 1xHxW tensor, got " +
                                    shape_str(image.shape));
    if (out_h == 0 || out_w == 0)
        throw std::invalid_argument("bilinear_resize: target dims must be positive");
    const std::size_t in_h = image.shape[1], in_w = image.shape[2];
    if (in_h == out_h && in_w == out_w) return image;

    Tensor<double> out({1, out_h, out_w});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
    const auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
    for (std::size_t y = 0; y < out_h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, static_cast<double>(in_h - 1)));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::max(0.0, std::min(fx, static_cast<double>(in_w - 1)));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, in_w - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = lerp(image.data[y0 * in_w + x0], image.data[y0 * in_w + x1], tx);
            const double bot = lerp(image.data[y1 * in_w + x0], image.data[y1 * in_w + x1], tx);
            out.data[y * out_w + x] = lerp(top, bot, ty);
        }
    }
    return out;
}

Tensor<double> load_image(const std::string& path, std::size_t target_h, std::size_t target_w) {
    return bilinear_resize(read_gray_image(path), target_h, target_w);
}

void SyntheticSpec::validate() const {
    if (image_size == 0)
        throw std::invalid_argument("synthetic spec: image_size must be positive");
    if (n_samples == 0)
        throw std::invalid_argument("synthetic spec: n_samples must be positive");
    if (!(noise_sigma >= 0.0))
        throw std::invalid_argument("synthetic spec: noise_sigma must be nonnegative");
    if (signal_region.row0 >= signal_region.row1 || signal_region.col0 >= signal_region.col1)
        throw std::invalid_argument("synthetic spec: signal_region must have area >= 1");
    if (signal_region.row1 > image_size || signal_region.col1 > image_size)
        throw std::invalid_argument("synthetic spec: signal_region exceeds the image bounds");
    if (signal_region.area() * 4 > image_size * image_size)
        throw std::invalid_argument(
            "synthetic spec: signal_region area exceeds a quarter of the image");
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> age_dist(0.0, 90.0);
    std::normal_distribution<double> unit_noise(0.0, 1.0);
    const std::size_t s = spec.image_size;

    SyntheticDataset out;
    out.signal_region = spec.signal_region;
    out.images.reserve(spec.n_samples);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        const double age = age_dist(rng);
        const double signal = 0.1 + 0.8 * (age / 90.0);
        LabeledImage img;
        img.pixels = Tensor<double>({1, s, s});
        for (std::size_t r = 0; r < s; ++r) {
            for (std::size_t c = 0; c < s; ++c) {
                const double base = spec.signal_region.contains(r, c) ? signal : 0.5;
                double v = base + spec.noise_sigma * unit_noise(rng);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                img.pixels.data[r * s + c] = v;
            }
        }
        img.age_years = age;
        img.age_normalized = age / 90.0;
        out.images.push_back(std::move(img));
    }
    return out;
}

void export_synthetic(const SyntheticDataset& dataset, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ostringstream csv;
    csv << "Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,"
           "View Position,OriginalImageWidth,OriginalImageHeight,"
           "OriginalImagePixelSpacing_x,OriginalImagePixelSpacing_y\n";
    for (std::size_t i = 0; i < dataset.images.size(); ++i) {
        const LabeledImage& img = dataset.images[i];
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%05zu", i);
        write_pgm(dir + "/" + name + ".pgm", img.pixels);
        const std::size_t size = img.pixels.shape[1];
        csv << name << ".pgm,No Finding,0,S" << i << ',' << std::llround(img.age_years)
            << ",U,PA," << img.pixels.shape[2] << ',' << size << ",1.0,1.0\n";
    }
    atomic_write_file(dir + "/metadata.csv", csv.str());
}

}  // namespace cxrage
