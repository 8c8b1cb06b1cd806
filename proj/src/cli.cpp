#include "arfc/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>

#include "arfc/data.hpp"
#include "arfc/metrics.hpp"
#include "arfc/net.hpp"
#include "arfc/selftest.hpp"
#include "arfc/serialize.hpp"
#include "arfc/wavelet.hpp"

namespace arfc {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shortest text that reads back to the same double.
std::string exact(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

RunConfig read_run_config(const fs::path& path)
{
    try {
        return RunConfig::from_key_values(read_key_values(path));
    } catch (const std::exception& e) {
        throw UsageError("config " + path.string() + ": " + e.what());
    }
}

// Falls back to every sample when the split is absent from the manifest and
// was not asked for explicitly.
std::vector<Sample> load_split(const fs::path& dir, const std::string& split, bool explicit_split, std::ostream& out)
{
    auto samples = load_dataset(dir, split);
    if (samples.empty() && !explicit_split) {
        samples = load_dataset(dir);
        out << "note: no '" << split << "' split in " << dir.string() << ", using all " << samples.size()
            << " samples\n";
    }
    if (samples.empty())
        throw ParseError("no samples in " + dir.string() + (explicit_split ? " for split '" + split + "'" : ""));
    return samples;
}

std::unique_ptr<ArfcNet<float>> open_checkpoint(const fs::path& dir)
{
    auto net = std::make_unique<ArfcNet<float>>(read_checkpoint_config(dir));
    load_checkpoint(*net, dir);
    net->set_training(false);
    return net;
}

// Saliency per sample, from a checkpoint or from <id>.tensor / <id>.pgm files.
std::vector<Tensor<float>> predictions_for(const std::vector<Sample>& samples, const std::optional<fs::path>& checkpoint,
                                           const std::optional<fs::path>& pred_dir)
{
    std::vector<Tensor<float>> preds;
    if (checkpoint) {
        auto net = open_checkpoint(*checkpoint);
        for (const Sample& s : samples)
            preds.push_back(infer_padded(*net, s.image).saliency);
        return preds;
    }
    for (const Sample& s : samples) {
        const fs::path raw = *pred_dir / (s.id + ".tensor");
        const fs::path pgm = *pred_dir / (s.id + ".pgm");
        if (fs::exists(raw))
            preds.push_back(read_tensor<float>(raw));
        else if (fs::exists(pgm))
            preds.push_back(load_pgm(pgm));
        else
            throw ParseError("no prediction for sample " + s.id + " in " + pred_dir->string());
        if (preds.back().shape() != s.mask.shape())
            throw ParseError("prediction for " + s.id + " has shape " + preds.back().shape().str() + ", mask has " +
                             s.mask.shape().str());
    }
    return preds;
}

void print_results(std::ostream& out, const std::vector<CheckResult>& results)
{
    for (const CheckResult& r : results)
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
}

std::ofstream open_output(const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Infrared small-target segmentation: data, training, evaluation and checks", "arfc"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string workdir = ".";
    app.add_option("--workdir", workdir, "Base directory for relative paths");

    // gen-data
    SynthConfig synth;
    std::string gen_out, background = "cloud";
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", synth.count, "Number of images");
    gen->add_option("--size", synth.image_size, "Image side in pixels");
    gen->add_option("--seed", synth.seed);
    gen->add_option("--test-count", synth.test_count, "Trailing images assigned to the test split");
    gen->add_option("--targets-min", synth.targets_min);
    gen->add_option("--targets-max", synth.targets_max);
    gen->add_option("--sigma-min", synth.sigma_min, "Blob sigma range, pixels");
    gen->add_option("--sigma-max", synth.sigma_max);
    gen->add_option("--contrast-min", synth.contrast_min, "Blob peak range");
    gen->add_option("--contrast-max", synth.contrast_max);
    gen->add_option("--background", background)->check(CLI::IsMember({"flat", "gradient", "cloud"}));
    gen->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma");

    // train
    std::string data_dir, config_path, train_out, split;
    int epochs = 0;
    auto* tr = app.add_subcommand("train", "Train on a dataset directory");
    tr->add_option("--data", data_dir)->required();
    tr->add_option("--config", config_path, "key = value file; unknown keys are errors");
    tr->add_option("--out", train_out, "Run directory: checkpoint/, loss_log.csv, run.cfg")->required();
    auto* epochs_opt = tr->add_option("--epochs", epochs, "Overrides the config value");
    tr->add_option("--split", split, "Manifest split (default train)");

    // eval and roc share their inputs
    std::string checkpoint, pred_dir, report_out;
    double threshold = 0.5, radius = 3.0;
    int roc_steps = 100;
    auto add_inputs = [&](CLI::App* sub) {
        sub->add_option("--data", data_dir)->required();
        auto* c = sub->add_option("--checkpoint", checkpoint, "Checkpoint directory");
        auto* p = sub->add_option("--predictions", pred_dir, "Directory of <id>.tensor or <id>.pgm predictions");
        c->excludes(p);
        sub->add_option("--split", split, "Manifest split (default test)");
        sub->add_option("--out", report_out, "Output CSV")->required();
    };
    auto* ev = app.add_subcommand("eval", "Pixel and target metrics over a split");
    add_inputs(ev);
    ev->add_option("--threshold", threshold, "Foreground when saliency > threshold")->check(CLI::Range(0.0, 1.0));
    ev->add_option("--radius", radius, "Centroid match radius, pixels")->check(CLI::PositiveNumber);
    auto* roc = app.add_subcommand("roc", "Pixel ROC table over a split");
    add_inputs(roc);
    roc->add_option("--steps", roc_steps, "Uniform thresholds 1, 1-1/steps, ..., 0")->check(CLI::Range(1, 100000));

    // infer
    std::string image_path, saliency_out, mask_out;
    auto* inf = app.add_subcommand("infer", "Saliency and mask for one PGM image");
    inf->add_option("--checkpoint", checkpoint)->required();
    inf->add_option("--image", image_path)->required();
    inf->add_option("--saliency", saliency_out, "Raw tensor output")->required();
    inf->add_option("--mask", mask_out, "PGM mask output")->required();
    inf->add_option("--threshold", threshold)->check(CLI::Range(0.0, 1.0));

    // checks
    std::uint64_t check_seed = 7;
    bool inject_fault = false;
    auto* gc = app.add_subcommand("gradcheck", "64-bit finite-difference gradient suite");
    gc->add_option("--seed", check_seed);
    auto* st = app.add_subcommand("selftest", "Module oracles");
    st->add_option("--seed", check_seed);
    st->add_flag("--inject-fault", inject_fault, "Flip a sign in the inverse wavelet transform")->group("");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    const fs::path base(workdir);
    auto at = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    const bool explicit_split = !split.empty();

    try {
        if (gen->parsed()) {
            synth.background = background == "flat"       ? Background::flat
                               : background == "gradient" ? Background::gradient
                                                          : Background::cloud;
            try {
                synth.validate();
            } catch (const ConfigError& e) {
                throw UsageError(e.what());
            }
            generate_synthetic(synth, at(gen_out), [&](const std::string& w) { err << "warning: " << w << '\n'; });
            out << "wrote " << synth.count << " samples to " << at(gen_out).string() << '\n';
        } else if (tr->parsed()) {
            RunConfig rc = config_path.empty() ? RunConfig{} : read_run_config(at(config_path));
            if (epochs_opt->count() != 0) {
                rc.train.epochs = epochs;
                try {
                    rc.train.validate();
                } catch (const ConfigError& e) {
                    throw UsageError(e.what());
                }
            }
            const auto data = load_split(at(data_dir), explicit_split ? split : "train", explicit_split, out);
            const fs::path run = at(train_out);
            fs::create_directories(run);
            {
                std::ofstream cfg = open_output(run / "run.cfg");
                for (const auto& kv : {rc.net.to_key_values(), rc.train.to_key_values()})
                    for (const auto& [k, v] : kv)
                        cfg << k << " = " << v << '\n';
            }
            std::ofstream log = open_output(run / "loss_log.csv");
            log << "epoch,batch,lr,loss\n";
            ArfcNet<float> net(rc.net);
            out << "training on " << data.size() << " samples, " << net.parameter_count() << " parameters\n";
            train(net, data, rc.train, [&](const EpochRecord& r) {
                for (std::size_t b = 0; b < r.batch_losses.size(); ++b)
                    log << r.epoch << ',' << b << ',' << exact(r.lr) << ',' << exact(r.batch_losses[b]) << '\n';
                log.flush();
                out << "epoch " << r.epoch + 1 << '/' << rc.train.epochs << " lr " << r.lr << " loss " << r.mean_loss
                    << '\n';
                return true;
            });
            save_checkpoint(net, run / "checkpoint");
            out << "checkpoint written to " << (run / "checkpoint").string() << '\n';
        } else if (ev->parsed() || roc->parsed()) {
            if (checkpoint.empty() == pred_dir.empty())
                throw UsageError("give exactly one of --checkpoint and --predictions");
            const auto samples = load_split(at(data_dir), explicit_split ? split : "test", explicit_split, out);
            std::vector<Tensor<float>> masks;
            for (const Sample& s : samples)
                masks.push_back(s.mask);
            const auto preds =
                predictions_for(samples, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(at(checkpoint)),
                                pred_dir.empty() ? std::nullopt : std::optional<fs::path>(at(pred_dir)));
            std::ofstream os = open_output(at(report_out));
            if (ev->parsed()) {
                const EvalReport r = evaluate_split(preds, masks, EvalConfig{threshold, radius, {}});
                write_report_csv(os, r);
                out << "iou=" << r.iou << " f1=" << r.f1 << " pd=" << r.pd << " fa_e6=" << r.fa * 1e6 << '\n';
            } else {
                const auto points = roc_curve(preds, masks, uniform_thresholds(roc_steps));
                write_roc_csv(os, points);
                out << "wrote " << points.size() << " ROC points\n";
            }
        } else if (inf->parsed()) {
            auto net = open_checkpoint(at(checkpoint));
            const Inference r = infer_padded(*net, load_pgm(at(image_path)), threshold);
            const fs::path sal = at(saliency_out), msk = at(mask_out);
            for (const fs::path& p : {sal, msk})
                if (p.has_parent_path())
                    fs::create_directories(p.parent_path());
            write_tensor(sal, r.saliency);
            save_pgm(msk, r.mask);
            out << "foreground pixels: " << BinaryMap::from_tensor(r.mask).count() << '\n';
        } else if (gc->parsed() || st->parsed()) {
            std::vector<CheckResult> results;
            if (gc->parsed()) {
                results = run_gradient_suite(check_seed);
            } else {
                set_synthesis_fault(inject_fault);
                results = run_selftest(check_seed);
                set_synthesis_fault(false);
            }
            print_results(out, results);
            if (!all_passed(results))
                return exit_numeric;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << '\n';
        return exit_data;
    }
    return exit_ok;
}

}  // namespace arfc
