#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cxrage/checkpoint.hpp"
#include "cxrage/dataset.hpp"
#include "cxrage/fsutil.hpp"
#include "cxrage/image_io.hpp"
#include "cxrage/metrics.hpp"
#include "cxrage/network.hpp"
#include "cxrage/report.hpp"
#include "cxrage/saliency.hpp"
#include "cxrage/trainer.hpp"

using namespace cxrage;

namespace {

ViewSelector parse_view(const std::string& s) {
    if (s == "PA") return ViewSelector::PA;
    if (s == "AP") return ViewSelector::AP;
    if (s == "BOTH") return ViewSelector::BOTH;
    throw std::invalid_argument("view must be PA, AP, or BOTH, got '" + s + "'");
}

Rect parse_region(const std::string& text) {
    std::size_t v[4];
    char sep[3];
    std::istringstream in(text);
    if (!(in >> v[0] >> sep[0] >> v[1] >> sep[1] >> v[2] >> sep[2] >> v[3]) || sep[0] != ',' ||
        sep[1] != ',' || sep[2] != ',')
        throw std::invalid_argument("region must be four integers r0,c0,r1,c1, got '" + text +
                                    "'");
    std::string rest;
    in >> rest;
    if (!rest.empty())
        throw std::invalid_argument("region must be four integers r0,c0,r1,c1, got '" + text +
                                    "'");
    return Rect{v[0], v[1], v[2], v[3]};
}

std::vector<MetadataRecord> prepare_records(const std::string& metadata_path,
                                            const std::string& view_label, bool drop_outliers) {
    auto records = parse_metadata(read_file(metadata_path));
    records = filter_view(records, parse_view(view_label));
    if (records.empty())
        throw std::runtime_error("dataset is empty after the view filter (" + view_label + ")");
    if (drop_outliers) {
        records = remove_age_outliers(records, 90.0);
        if (records.empty())
            throw std::runtime_error("dataset is empty after the age-outlier filter (age > 90)");
    }
    return records;
}

std::vector<LabeledImage> load_labeled(const std::vector<MetadataRecord>& records,
                                       const std::string& image_dir, std::size_t h,
                                       std::size_t w) {
    std::vector<LabeledImage> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back(labeled_from_record(r, load_image(image_dir + "/" + r.image_index, h, w)));
    return out;
}

template <typename T>
Tensor<T> single_input(const Tensor<double>& pixels) {
    Tensor<T> img({1, 1, pixels.shape[1], pixels.shape[2]});
    for (std::size_t i = 0; i < pixels.data.size(); ++i)
        img.data[i] = static_cast<T>(pixels.data[i]);
    return img;
}

template <typename T>
std::vector<double> predict_batched(const Network<T>& net, const std::vector<LabeledImage>& set) {
    const std::size_t per = net.spec.input_channels * net.spec.input_h * net.spec.input_w;
    std::vector<double> preds;
    preds.reserve(set.size());
    for (std::size_t start = 0; start < set.size(); start += 32) {
        const std::size_t n = std::min<std::size_t>(32, set.size() - start);
        Tensor<T> batch({n, net.spec.input_channels, net.spec.input_h, net.spec.input_w});
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < per; ++k)
                batch.data[b * per + k] = static_cast<T>(set[start + b].pixels.data[k]);
        for (const double age : predict_age(net, batch)) preds.push_back(age);
    }
    return preds;
}

struct SynthArgs {
    std::string out;
    std::size_t size = 64;
    std::size_t n = 100;
    std::uint64_t seed = 0;
    double noise = 0.05;
    std::string region;
};

int cmd_synth(const SynthArgs& a) {
    SyntheticSpec spec;
    spec.image_size = a.size;
    spec.n_samples = a.n;
    spec.noise_sigma = a.noise;
    spec.seed = a.seed;
    if (a.region.empty()) {
        const std::size_t q = a.size / 4;
        spec.signal_region = Rect{q, q, a.size - q, a.size - q};
    } else {
        spec.signal_region = parse_region(a.region);
    }
    spec.validate();
    const SyntheticDataset data = generate_synthetic(spec);
    export_synthetic(data, a.out);
    std::ostringstream manifest;
    manifest << spec.signal_region.row0 << ',' << spec.signal_region.col0 << ','
             << spec.signal_region.row1 << ',' << spec.signal_region.col1 << '\n';
    atomic_write_file(a.out + "/region.txt", manifest.str());
    std::cout << "wrote " << data.images.size() << " images to " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string metadata;
    std::string images;
    std::string view = "BOTH";
    std::string preset = "DENSE_TINY";
    std::size_t epochs = 60;
    std::uint64_t seed = 0;
    bool by_patient = true;
    std::string objective = "mse";
    std::string out;
    std::string stats;
    double lr = 0.05;
    std::size_t batch_size = 32;
    std::size_t patience = 10;
    bool patience_given = false;
    double min_delta = 1e-5;
    int precision = 32;
};

template <typename T>
void train_and_save(const NetworkSpec& nspec, const SplitDataset& data, const TrainConfig& cfg,
                    const std::string& ckpt_path, const std::string& stats_path) {
    const Network<T> net = build_network<T>(nspec);
    const TrainResult result = train(net, data, cfg, &std::cout);
    atomic_write_file(stats_path, epoch_stats_csv(result.history));
    if (result.best.epoch >= 1) save_checkpoint(result.best, ckpt_path);
    if (result.diverged)
        throw std::runtime_error(
            "training diverged (non-finite loss); stats cover the completed epochs");
    std::cout << "best epoch " << result.best.epoch << " val_loss " << result.best.best_val_loss
              << "; checkpoint " << ckpt_path << "\n";
}

int cmd_train(const TrainArgs& a) {
    const auto records = prepare_records(a.metadata, a.view, true);
    const NetworkSpec nspec = spec_for_preset(a.preset, a.seed);
    const auto labeled = load_labeled(records, a.images, nspec.input_h, nspec.input_w);
    const SplitDataset data = split(labeled, 0.8, a.seed, a.by_patient);

    TrainConfig cfg;
    if (a.objective == "mse")
        cfg.objective = Objective::MSE;
    else if (a.objective == "r2")
        cfg.objective = Objective::R2;
    else
        throw std::invalid_argument("objective must be mse or r2, got '" + a.objective + "'");
    cfg.learning_rate = a.lr;
    cfg.batch_size = a.batch_size;
    cfg.max_epochs = a.epochs;
    cfg.patience = a.patience;
    if (!a.patience_given && a.epochs >= 2 && cfg.patience >= a.epochs)
        cfg.patience = a.epochs - 1;
    cfg.min_delta = a.min_delta;
    cfg.seed = a.seed;
    if (a.precision != 32 && a.precision != 64)
        throw std::invalid_argument("precision must be 32 or 64, got " +
                                    std::to_string(a.precision));
    cfg.precision = a.precision == 64 ? Precision::F64 : Precision::F32;

    const std::string stats_path = a.stats.empty() ? a.out + ".stats.csv" : a.stats;
    if (a.precision == 64)
        train_and_save<double>(nspec, data, cfg, a.out, stats_path);
    else
        train_and_save<float>(nspec, data, cfg, a.out, stats_path);
    return 0;
}

struct EvalArgs {
    std::string ckpt;
    std::string metadata;
    std::string images;
    std::string view = "BOTH";
    std::string report;
};

int cmd_eval(const EvalArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const auto records = prepare_records(a.metadata, a.view, true);
    const auto labeled =
        load_labeled(records, a.images, ckpt.spec.input_h, ckpt.spec.input_w);
    const MetricsReport report =
        ckpt.precision == 64
            ? evaluate(checkpoint_to_network<double>(ckpt), labeled, parse_view(a.view))
            : evaluate(checkpoint_to_network<float>(ckpt), labeled, parse_view(a.view));
    atomic_write_file(a.report, metrics_report_json(report));
    char line[256];
    std::snprintf(line, sizeof(line),
                  "n=%zu view=%s mse_normalized=%.6g r_squared=%.6g recall_pm4=%.4g "
                  "recall_pm9=%.4g mean_signed_error_years=%.4g",
                  report.n, view_name(report.view).c_str(), report.mse_normalized,
                  report.r_squared, report.recall_pm4, report.recall_pm9,
                  report.mean_signed_error_years);
    std::cout << line << "\n";
    return 0;
}

struct SaliencyArgs {
    std::string ckpt;
    std::string image;
    std::string metadata;
    std::string images;
    std::string filter = "BOTH";
    std::string out;
    std::string region_manifest;
};

template <typename T>
void saliency_batch(const Network<T>& net, const std::vector<std::string>& indices,
                    const std::vector<Tensor<double>>& pixels, const SaliencyArgs& a) {
    std::filesystem::create_directories(a.out);
    const bool with_ratio = !a.region_manifest.empty();
    Rect region;
    if (with_ratio) {
        std::string text = read_file(a.region_manifest);
        region = parse_region(text);
    }
    std::string csv = with_ratio ? "image_index,raw_max,region_ratio\n" : "image_index,raw_max\n";
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const Tensor<T> img = single_input<T>(pixels[i]);
        const SaliencyMap raw = saliency_map(input_gradient(net, img));
        const SaliencyMap norm = normalize_map(raw);
        const RgbRaster raster = overlay(pixels[i], norm);
        write_rgb_png(a.out + "/" + indices[i] + ".saliency.png", raster.width, raster.height,
                      raster.pixels);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9g", raw.raw_max);
        csv += indices[i];
        csv += ',';
        csv += buf;
        if (with_ratio) {
            std::snprintf(buf, sizeof(buf), "%.9g", region_saliency_ratio(norm, region));
            csv += ',';
            csv += buf;
        }
        csv += '\n';
    }
    atomic_write_file(a.out + "/saliency.csv", csv);
    std::cout << "wrote " << pixels.size() << " overlays to " << a.out << "\n";
}

int cmd_saliency(const SaliencyArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const std::size_t h = ckpt.spec.input_h, w = ckpt.spec.input_w;

    std::vector<std::string> indices;
    std::vector<Tensor<double>> pixels;
    const bool single = !a.image.empty();
    const bool batch = !a.metadata.empty() || !a.images.empty();
    if (single == batch)
        throw std::invalid_argument(
            "pass either --image, or --metadata with --images, but not both");
    if (single) {
        indices.push_back(std::filesystem::path(a.image).filename().string());
        pixels.push_back(load_image(a.image, h, w));
    } else {
        if (a.metadata.empty() || a.images.empty())
            throw std::invalid_argument("batch mode needs both --metadata and --images");
        for (const auto& r : prepare_records(a.metadata, a.filter, false)) {
            indices.push_back(r.image_index);
            pixels.push_back(load_image(a.images + "/" + r.image_index, h, w));
        }
    }
    if (ckpt.precision == 64)
        saliency_batch(checkpoint_to_network<double>(ckpt), indices, pixels, a);
    else
        saliency_batch(checkpoint_to_network<float>(ckpt), indices, pixels, a);
    return 0;
}

struct DisparityArgs {
    std::string ckpt;
    std::string metadata;
    std::string images;
    double threshold = 10.0;
    std::string out;
};

int cmd_disparity(const DisparityArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const auto records = prepare_records(a.metadata, "BOTH", true);
    const auto labeled =
        load_labeled(records, a.images, ckpt.spec.input_h, ckpt.spec.input_w);
    const std::vector<double> preds =
        ckpt.precision == 64 ? predict_batched(checkpoint_to_network<double>(ckpt), labeled)
                             : predict_batched(checkpoint_to_network<float>(ckpt), labeled);
    std::vector<std::string> indices;
    std::vector<double> real;
    for (const auto& r : records) {
        indices.push_back(r.image_index);
        real.push_back(static_cast<double>(r.patient_age));
    }
    const auto rows = disparity_rows(indices, real, preds, a.threshold);
    atomic_write_file(a.out, disparity_csv(rows));
    std::cout << rows.size() << " of " << records.size() << " predictions deviate by more than "
              << a.threshold << " years\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chest X-ray age regression: synthetic data, training, evaluation, saliency"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--size", synth.size, "Square image size (default 64)");
    synth_cmd->add_option("--n", synth.n, "Number of samples (default 100)");
    synth_cmd->add_option("--seed", synth.seed, "Generator seed (default 0)");
    synth_cmd->add_option("--noise", synth.noise, "Gaussian noise sigma (default 0.05)");
    synth_cmd->add_option("--region", synth.region,
                          "Signal region r0,c0,r1,c1 (default centered quarter)");

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the age regressor");
    train_cmd->add_option("--metadata", tr.metadata, "Metadata CSV path")->required();
    train_cmd->add_option("--images", tr.images, "Image directory")->required();
    train_cmd->add_option("--view", tr.view, "View filter: PA, AP, or BOTH (default BOTH)");
    train_cmd->add_option("--preset", tr.preset, "DENSE_TINY or DENSE169_SHAPE");
    train_cmd->add_option("--epochs", tr.epochs, "Epoch limit (default 60)");
    train_cmd->add_option("--seed", tr.seed, "Seed for init, split, and shuffling");
    train_cmd->add_option("--by-patient", tr.by_patient,
                          "Split by patient id, true or false (default true)");
    train_cmd->add_option("--objective", tr.objective, "mse or r2 (default mse)");
    train_cmd->add_option("--out", tr.out, "Checkpoint output path")->required();
    train_cmd->add_option("--stats", tr.stats, "Stats CSV path (default <out>.stats.csv)");
    train_cmd->add_option("--lr", tr.lr, "Learning rate (default 0.05)");
    train_cmd->add_option("--batch-size", tr.batch_size, "Batch size (default 32)");
    CLI::Option* patience_opt =
        train_cmd->add_option("--patience", tr.patience, "Plateau patience (default 10)");
    train_cmd->add_option("--min-delta", tr.min_delta,
                          "Required val-loss improvement (default 1e-5)");
    train_cmd->add_option("--precision", tr.precision, "32 or 64 (default 32)");

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
    eval_cmd->add_option("--metadata", ev.metadata, "Metadata CSV path")->required();
    eval_cmd->add_option("--images", ev.images, "Image directory")->required();
    eval_cmd->add_option("--view", ev.view, "View filter: PA, AP, or BOTH (default BOTH)");
    eval_cmd->add_option("--report", ev.report, "Metrics JSON output path")->required();

    SaliencyArgs sa;
    CLI::App* sal_cmd = app.add_subcommand("saliency", "Render saliency overlays");
    sal_cmd->add_option("--ckpt", sa.ckpt, "Checkpoint path")->required();
    sal_cmd->add_option("--image", sa.image, "Single input image");
    sal_cmd->add_option("--metadata", sa.metadata, "Metadata CSV for batch mode");
    sal_cmd->add_option("--images", sa.images, "Image directory for batch mode");
    sal_cmd->add_option("--filter", sa.filter, "Batch view filter (default BOTH)");
    sal_cmd->add_option("--out", sa.out, "Output directory")->required();
    sal_cmd->add_option("--region-manifest", sa.region_manifest,
                        "Region file r0,c0,r1,c1 enabling the ratio column");

    DisparityArgs di;
    CLI::App* disp_cmd = app.add_subcommand("disparity", "Report large prediction gaps");
    disp_cmd->add_option("--ckpt", di.ckpt, "Checkpoint path")->required();
    disp_cmd->add_option("--metadata", di.metadata, "Metadata CSV path")->required();
    disp_cmd->add_option("--images", di.images, "Image directory")->required();
    disp_cmd->add_option("--threshold", di.threshold, "Gap threshold in years (default 10)");
    disp_cmd->add_option("--out", di.out, "Disparity CSV output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        tr.patience_given = patience_opt->count() > 0;
        if (synth_cmd->parsed()) return cmd_synth(synth);
        if (train_cmd->parsed()) return cmd_train(tr);
        if (eval_cmd->parsed()) return cmd_eval(ev);
        if (sal_cmd->parsed()) return cmd_saliency(sa);
        if (disp_cmd->parsed()) return cmd_disparity(di);
        std::cerr << "error: no subcommand selected\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
