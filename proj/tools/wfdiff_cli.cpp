// wfdiff command-line front end.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "wfdiff/wfdiff.hpp"

namespace {

using namespace wfdiff;
using Img = Tensor<float>;

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Img read_image(const std::string& path) { return has_suffix(path, ".wfdt") ? load_wfdt<float>(path) : read_ppm<float>(path); }

void write_image(const Img& img, const std::string& path) {
    if (has_suffix(path, ".wfdt")) {
        save_wfdt(img, path);
    } else {
        write_ppm(img, path);
    }
}

constexpr const char* kHeaderFormat = "wfdiff-checkpoint";

std::string checkpoint_header(const RunConfig& cfg, bool with_frdam) {
    nlohmann::json h = {{"format", kHeaderFormat},
                        {"stages", with_frdam ? nlohmann::json{"wfi2", "frdam"} : nlohmann::json{"wfi2"}},
                        {"config", config_to_json(cfg)}};
    return h.dump(2) + "\n";
}

struct LoadedModel {
    RunConfig cfg;
    std::unique_ptr<WFINet<float>> net;
    std::unique_ptr<FrdamNets<float>> frdam;
};

LoadedModel load_model(const std::string& path) {
    const auto ck = load_checkpoint<float>(path);
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(ck.header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint header is not JSON: " + std::string(e.what()));
    }
    if (!h.is_object() || h.value("format", "") != kHeaderFormat || !h.contains("config")) {
        throw FormatError("checkpoint header is not a wfdiff header");
    }
    LoadedModel m;
    m.cfg = config_from_json(h.at("config"));
    Rng rng(m.cfg.seed);
    m.net = std::make_unique<WFINet<float>>(m.cfg.net, rng);
    auto p = m.net->parameters();
    load_parameters(p, ck.with_prefix("wfi2."));
    bool frdam = false;
    for (const auto& s : h.at("stages"))
        if (s == "frdam") frdam = true;
    if (frdam) {
        m.frdam = std::make_unique<FrdamNets<float>>(m.cfg.denoiser, rng);
        auto q = m.frdam->parameters();
        load_parameters(q, ck.with_prefix("frdam."));
    }
    return m;
}

void save_model(const std::string& path, const RunConfig& cfg, const WFINet<float>& net, const FrdamNets<float>* frdam) {
    Checkpoint<float> ck;
    ck.header = checkpoint_header(cfg, frdam != nullptr);
    ck.add("wfi2.", net.parameters());
    if (frdam) ck.add("frdam.", frdam->parameters());
    save_checkpoint(ck, path);
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

/// Training pair from files, or a deterministic synthetic pair when both
/// paths are empty.
std::pair<Img, Img> training_pair(const std::string& degraded, const std::string& clean, std::uint64_t seed,
                                  std::size_t size) {
    if (degraded.empty() != clean.empty()) throw ConfigError("give both --degraded and --clean, or neither");
    if (!degraded.empty()) {
        auto d = read_image(degraded), c = read_image(clean);
        detail::require_same_shape(d.shape(), c.shape(), "training pair");
        return {d, c};
    }
    Rng rng = Rng(seed).fork(100);
    auto p = synthetic_pair<float>(3, size, size, rng);
    return {p.degraded, p.clean};
}

void print_progress(const char* tag, std::size_t step, double loss) {
    std::cerr << tag << " step " << step << " loss " << format_number(loss) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wavelet/Fourier frequency-domain enhancement toolkit"};
    app.require_subcommand(1);

    // dwt / idwt
    std::string in_path, out_path, base;
    std::string crop_spec;
    auto* dwt_cmd = app.add_subcommand("dwt", "Haar DWT of an image into <out>.ll/.lh/.hl/.hh (WFDT)");
    dwt_cmd->add_option("input", in_path, "Input image (PPM/PGM or .wfdt)")->required();
    dwt_cmd->add_option("--out", out_path, "Output base path")->required();

    auto* idwt_cmd = app.add_subcommand("idwt", "Inverse Haar DWT from <base>.ll/.lh/.hl/.hh");
    idwt_cmd->add_option("base", base, "Subband base path")->required();
    idwt_cmd->add_option("--out", out_path, "Output image (PPM/PGM or .wfdt)")->required();
    idwt_cmd->add_option("--crop", crop_spec, "Crop the result to HxW (undoes odd-extent padding)");

    // fft / recombine
    auto* fft_cmd = app.add_subcommand("fft", "Unitary 2D DFT into <out>.amp/.phase (WFDT)");
    fft_cmd->add_option("input", in_path, "Input image or tensor")->required();
    fft_cmd->add_option("--out", out_path, "Output base path")->required();

    std::string amp_base, phase_base;
    auto* rec_cmd = app.add_subcommand("recombine", "Inverse DFT of one spectrum's amplitude with another's phase");
    rec_cmd->add_option("--amp", amp_base, "Base path whose .amp is used")->required();
    rec_cmd->add_option("--phase", phase_base, "Base path whose .phase is used")->required();
    rec_cmd->add_option("--out", out_path, "Output image or tensor")->required();

    // swap / analyze / metrics
    std::string a_path, b_path, out_a, out_b, strategy = "s3", pairs_path;
    auto* swap_cmd = app.add_subcommand("swap", "Amplitude swap between two images");
    swap_cmd->add_option("a", a_path, "First image")->required();
    swap_cmd->add_option("b", b_path, "Second image")->required();
    swap_cmd->add_option("--strategy", strategy, "s1 (pixel), s2 (LL subband), s3 (all subbands)")
        ->check(CLI::IsMember({"s1", "s2", "s3"}));
    swap_cmd->add_option("--out-a", out_a, "Phase of a with amplitude of b")->required();
    swap_cmd->add_option("--out-b", out_b, "Phase of b with amplitude of a")->required();

    auto* analyze_cmd = app.add_subcommand("analyze", "Swap-and-score a corpus; CSV report");
    analyze_cmd->add_option("--strategy", strategy, "s1, s2 or s3")->check(CLI::IsMember({"s1", "s2", "s3"}));
    analyze_cmd->add_option("--pairs", pairs_path, "Manifest CSV: degraded_path,reference_path")->required();
    analyze_cmd->add_option("--out", out_path, "Report CSV (stdout when omitted)");

    auto* metrics_cmd = app.add_subcommand("metrics", "PSNR and SSIM of an image against a reference");
    metrics_cmd->add_option("image", a_path, "Image")->required();
    metrics_cmd->add_option("reference", b_path, "Reference image")->required();

    // training / inference
    std::string config_path, degraded_path, clean_path, ckpt_path, stage1_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::size_t steps = 0, synthetic_size = 64;
    bool adjust = false;

    auto* t1_cmd = app.add_subcommand("train-stage1", "Train WFI2-net on one degraded/clean pair");
    t1_cmd->add_option("--config", config_path, "JSON run configuration");
    t1_cmd->add_option("--degraded", degraded_path, "Degraded image (synthetic pair when omitted)");
    t1_cmd->add_option("--clean", clean_path, "Clean image");
    t1_cmd->add_option("--synthetic-size", synthetic_size, "Extent of the synthetic pair")->check(CLI::PositiveNumber);
    t1_cmd->add_option("--steps", steps, "Override stage1.steps");
    t1_cmd->add_option("--seed", seed, "Override the config seed");
    t1_cmd->add_option("--out", ckpt_path, "Checkpoint to write")->required();

    auto* t2_cmd = app.add_subcommand("train-stage2", "Train the residual denoisers on a frozen stage-1 model");
    t2_cmd->add_option("--stage1", stage1_path, "Stage-1 checkpoint")->required();
    t2_cmd->add_option("--degraded", degraded_path, "Degraded image (synthetic pair when omitted)");
    t2_cmd->add_option("--clean", clean_path, "Clean image");
    t2_cmd->add_option("--synthetic-size", synthetic_size, "Extent of the synthetic pair")->check(CLI::PositiveNumber);
    t2_cmd->add_option("--steps", steps, "Override stage2.steps");
    t2_cmd->add_option("--seed", seed, "Override the config seed");
    t2_cmd->add_option("--out", ckpt_path, "Checkpoint to write")->required();

    auto* sample_cmd = app.add_subcommand("sample", "Stage 1 plus residual diffusion sampling");
    sample_cmd->add_option("--checkpoint", ckpt_path, "Stage-2 checkpoint")->required();
    sample_cmd->add_option("--input", in_path, "Input image")->required();
    sample_cmd->add_option("--seed", seed, "Sampling seed");
    sample_cmd->add_option("--steps", steps, "Diffusion steps T (default: config)");
    sample_cmd->add_option("--out", out_path, "Output image")->required();

    auto* enhance_cmd = app.add_subcommand("enhance", "Stage-1 enhancement, optionally with --adjust");
    enhance_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint")->required();
    enhance_cmd->add_option("--input", in_path, "Input image")->required();
    enhance_cmd->add_flag("--adjust", adjust, "Apply residual diffusion adjustment (needs a stage-2 checkpoint)");
    enhance_cmd->add_option("--seed", seed, "Sampling seed");
    enhance_cmd->add_option("--steps", steps, "Diffusion steps T (default: config)");
    enhance_cmd->add_option("--out", out_path, "Output image")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        const auto parsed = app.get_subcommands();
        std::cerr << "error: " << e.what() << "\n\n" << (parsed.empty() ? app.help() : parsed.front()->help());
        return 2;
    }
    seed_given = t1_cmd->count("--seed") || t2_cmd->count("--seed");

    try {
        if (*dwt_cmd) {
            const auto padded = pad_even(read_image(in_path));
            if (padded.height != padded.image.dim(1) || padded.width != padded.image.dim(2)) {
                std::cerr << "note: padded " << padded.height << "x" << padded.width << " to even extents; use --crop "
                          << padded.height << "x" << padded.width << " with idwt\n";
            }
            const auto s = dwt2(padded.image);
            save_wfdt(s.ll, out_path + ".ll");
            save_wfdt(s.lh, out_path + ".lh");
            save_wfdt(s.hl, out_path + ".hl");
            save_wfdt(s.hh, out_path + ".hh");
        } else if (*idwt_cmd) {
            SubbandSet<float> s{load_wfdt<float>(base + ".ll"), load_wfdt<float>(base + ".lh"),
                                load_wfdt<float>(base + ".hl"), load_wfdt<float>(base + ".hh")};
            auto img = idwt2(s);
            if (!crop_spec.empty()) {
                const auto x = crop_spec.find('x');
                if (x == std::string::npos) throw ConfigError("--crop expects HxW");
                img = crop(img, std::stoul(crop_spec.substr(0, x)), std::stoul(crop_spec.substr(x + 1)));
            }
            write_image(img, out_path);
        } else if (*fft_cmd) {
            const auto s = fft2(read_image(in_path));
            save_wfdt(s.amplitude, out_path + ".amp");
            save_wfdt(s.phase, out_path + ".phase");
        } else if (*rec_cmd) {
            const Spectrum<float> a{load_wfdt<float>(amp_base + ".amp"), load_wfdt<float>(amp_base + ".phase")};
            const Spectrum<float> p{load_wfdt<float>(phase_base + ".amp"), load_wfdt<float>(phase_base + ".phase")};
            write_image(recombine(a, p), out_path);
        } else if (*swap_cmd) {
            const auto [x, y] = swap_amplitude(read_image(a_path), read_image(b_path), parse_swap_strategy(strategy));
            write_image(x, out_a);
            write_image(y, out_b);
        } else if (*analyze_cmd) {
            const auto report = analyze_corpus(read_manifest(pairs_path), parse_swap_strategy(strategy));
            for (const auto& r : report.rows)
                if (!r.error.empty()) std::cerr << "warning: pair " << r.pair_id << ": " << r.error << "\n";
            const auto csv = report_csv(report);
            if (out_path.empty()) {
                std::cout << csv;
            } else {
                std::ofstream os(out_path, std::ios::binary);
                if (!(os << csv)) throw FormatError("cannot write " + out_path);
            }
        } else if (*metrics_cmd) {
            const auto x = read_image(a_path), r = read_image(b_path);
            std::cout << "psnr_db " << format_number(psnr(x, r)) << "\n";
            std::cout << "ssim " << format_number(ssim(x, r)) << "\n";
        } else if (*t1_cmd) {
            auto cfg = config_or_default(config_path);
            if (seed_given) cfg.seed = seed;
            if (t1_cmd->count("--steps")) cfg.stage1.steps = steps;
            const auto [deg, clean] = training_pair(degraded_path, clean_path, cfg.seed, synthetic_size);
            Rng rng(cfg.seed);
            WFINet<float> net(cfg.net, rng);
            const auto hist = train_stage1(net, deg, clean, cfg.stage1, cfg.weights,
                                           [](std::size_t s, double l) { print_progress("stage1", s, l); });
            std::cout << "initial_loss " << format_number(hist.losses.front()) << "\nfinal_loss "
                      << format_number(hist.losses.back()) << "\n";
            save_model(ckpt_path, cfg, net, nullptr);
        } else if (*t2_cmd) {
            auto model = load_model(stage1_path);
            auto& cfg = model.cfg;
            if (seed_given) cfg.seed = seed;
            if (t2_cmd->count("--steps")) cfg.stage2.steps = steps;
            const auto [deg, clean] = training_pair(degraded_path, clean_path, cfg.seed, synthetic_size);
            const std::size_t m = 2 * std::max(cfg.net.spatial_multiple(), cfg.denoiser.spatial_multiple());
            const auto deg_p = pad_to_multiple(deg, m).image, clean_p = pad_to_multiple(clean, m).image;
            SubbandSet<float> initial;
            {
                NoGradGuard no_grad;
                initial = (*model.net)(dwt2(deg_p));
            }
            Rng rng = Rng(cfg.seed).fork(200);
            FrdamNets<float> frdam(cfg.denoiser, rng);
            const auto hist = train_stage2(frdam, initial, dwt2(clean_p), cfg.diffusion.schedule(), cfg.stage2, rng,
                                           cfg.diffusion.loss,
                                           [](std::size_t s, double l) { print_progress("stage2", s, l); });
            const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(100, cfg.stage2.steps / 10));
            std::cout << "ldfb_initial_avg " << format_number(hist.ldfb.head_mean(w)) << "\nldfb_final_avg "
                      << format_number(hist.ldfb.tail_mean(w)) << "\nhdfb_initial_avg "
                      << format_number(hist.hdfb.head_mean(w)) << "\nhdfb_final_avg "
                      << format_number(hist.hdfb.tail_mean(w)) << "\n";
            save_model(ckpt_path, cfg, *model.net, &frdam);
        } else if (*sample_cmd || *enhance_cmd) {
            const auto model = load_model(ckpt_path);
            const bool use_frdam = *sample_cmd || adjust;
            if (use_frdam && !model.frdam) throw ConfigError("checkpoint has no trained residual denoisers");
            const auto sched = steps ? model.cfg.diffusion.schedule(steps) : model.cfg.diffusion.schedule();
            const auto out = enhance(*model.net, use_frdam ? model.frdam.get() : nullptr, read_image(in_path), sched,
                                     Rng(seed));
            write_image(out, out_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
