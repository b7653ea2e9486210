// SPDX-License-Identifier: Apache-2.0
//
// r3avatar: synth / train / render / animate / retrieve.
// Exit codes: 0 success, 2 invalid input, 3 numeric failure.
#include "r3/animate.hpp"
#include "r3/archive.hpp"
#include "r3/io.hpp"
#include "r3/retrieval.hpp"
#include "r3/synth.hpp"
#include "r3/trainer.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace r3;

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

void write_image(const fs::path& path, const Image<float>& img) {
    if (path.extension() == ".r3im") write_raw_image(path, img);
    else if (path.extension() == ".png") write_png(path, img);
    else throw UsageError("output image must end in .png or .r3im: " + path.string());
}

struct SynthArgs {
    std::string spec, out;
    std::optional<std::uint64_t> seed;
};

void run_synth(const SynthArgs& a) {
    SynthSceneSpec spec;
    try {
        spec = read_json(a.spec).get<SynthSceneSpec>();
    } catch (const Json::exception& e) {
        throw FormatError(a.spec + ": " + e.what());
    }
    if (a.seed) spec.seed = *a.seed;
    const auto data = generate(spec);
    split(spec, spec.split); // validates the split against the scene
    write_dataset(a.out, data);
    std::fprintf(stderr, "wrote %zu views x %zu frames to %s\n", data.images.size(),
                 data.poses.size(), a.out.c_str());
}

struct TrainArgs {
    std::string dataset, config, out, loss_log;
    std::optional<std::uint64_t> seed;
};

void run_train(const TrainArgs& a) {
    auto run = read_run_config(a.config);
    if (a.seed) {
        run.avatar.seed = *a.seed;
        run.training.seed = *a.seed;
    }
    run.training.validate();
    const auto data = read_dataset(a.dataset);

    SynthSceneSpec shape;
    shape.frame_count = int(data.poses.size());
    shape.cameras.count = int(data.cameras.size());
    const auto part = split(shape, data.split);
    const auto set = training_set(data.cameras, data.poses, data.images, part);

    auto avatar = initialize_avatar<float>(data.skeleton, set.poses, run.avatar);
    OptimizerState<float> opt;
    const auto log = train(avatar, set, run.training, &opt);

    save_avatar(a.out, avatar, &opt);
    fs::path loss = a.loss_log;
    if (loss.empty()) loss = fs::path(a.out).replace_extension(".loss.csv");
    std::ofstream csv(loss);
    if (!csv) throw FormatError("cannot write " + loss.string());
    write_loss_csv(csv, log);

    double total = 0;
    int count = 0;
    for (const int v : part.test_views)
        for (std::size_t j = 0; j < part.train_frames.size(); ++j) {
            const int f = part.train_frames[j];
            const auto img = render_frame(avatar, double(data.poses[std::size_t(f)].frame_index),
                                          set.poses[j], set.cameras[std::size_t(v)],
                                          run.training.render);
            total += psnr<float>(img, data.images[std::size_t(v)][std::size_t(f)]);
            ++count;
        }
    std::fprintf(stderr, "trained %d iterations, %ld gaussians", run.training.iterations,
                 long(avatar.size()));
    if (count > 0) std::fprintf(stderr, ", held-out PSNR %.2f dB", total / count);
    std::fprintf(stderr, "\n");
}

struct RenderArgs {
    std::string avatar, pose_track, camera, out;
    double frame = 0;
    int camera_index = 0;
};

void run_render(const RenderArgs& a) {
    const auto avatar = load_avatar<float>(a.avatar);
    const auto& range = avatar.time_range();
    if (!(a.frame >= range.first && a.frame <= range.last))
        throw UsageError("frame " + std::to_string(a.frame) + " is outside the trained range [" +
                         std::to_string(range.first) + ", " + std::to_string(range.last) + "]");
    const auto track = read_pose_track(a.pose_track);
    const auto it = std::find_if(track.begin(), track.end(), [&](const Pose& p) {
        return double(p.frame_index) == a.frame;
    });
    if (it == track.end())
        throw UsageError("pose track has no frame " + std::to_string(a.frame));
    if (int(it->thetas.size()) != avatar.skeleton.size())
        throw ConfigError("pose joint count does not match the avatar skeleton");
    const auto cam = read_camera(a.camera, a.camera_index).cast<float>();
    write_image(a.out, render_frame(avatar, a.frame, *it, cam));
}

struct RetrieveArgs {
    std::string avatar, novel, camera, out, curve;
    int k = 20;
    double window = 3.0;
    int camera_index = 0;
    bool no_smoothing = false;
    std::string format = "png";
};

void check_track(const PoseTrack& novel, const Skeleton& skel) {
    if (novel.size() < 3) throw UsageError("novel pose track needs at least 3 frames");
    for (const auto& p : novel)
        if (int(p.thetas.size()) != skel.size())
            throw ConfigError("novel pose joint count does not match the avatar skeleton");
}

void run_animate(const RetrieveArgs& a) {
    const auto avatar = load_avatar<float>(a.avatar);
    const auto novel = read_pose_track(a.novel);
    check_track(novel, avatar.skeleton);
    AnimateOptions opt;
    opt.retrieval = {a.k, a.window};
    opt.retrieval.validate();
    opt.smoothing = !a.no_smoothing;
    const auto cam = read_camera(a.camera, a.camera_index).cast<float>();
    const auto index = build_index(avatar.training_poses, avatar.skeleton);
    RetrievalTrace trace;
    const auto frames = animate(avatar, index, novel, cam, opt, &trace);
    fs::create_directories(a.out);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d", trace.frames[f]);
        if (a.format == "png" || a.format == "both")
            write_png(fs::path(a.out) / (std::string(name) + ".png"), frames[f]);
        if (a.format == "raw" || a.format == "both")
            write_raw_image(fs::path(a.out) / (std::string(name) + ".r3im"), frames[f]);
    }
    std::ofstream csv(fs::path(a.out) / "trace.csv");
    if (!csv) throw FormatError("cannot write the trace in " + a.out);
    write_trace_csv(csv, trace);
    std::fprintf(stderr, "rendered %zu frames, %zu jitter entries\n", frames.size(),
                 trace.jitter_count());
}

void run_retrieve(const RetrieveArgs& a) {
    const auto avatar = load_avatar<float>(a.avatar);
    const auto novel = read_pose_track(a.novel);
    check_track(novel, avatar.skeleton);
    RetrievalParams params{a.k, a.window};
    params.validate();
    const auto trace = retrieve_track(build_index(avatar.training_poses, avatar.skeleton), novel,
                                      params);
    std::ofstream csv(a.curve);
    if (!csv) throw FormatError("cannot write " + a.curve);
    write_trace_csv(csv, trace);
}

void add_retrieval_flags(CLI::App* cmd, RetrieveArgs& a) {
    cmd->add_option("--k", a.k, "candidates ranked per query")->capture_default_str();
    cmd->add_option("--window", a.window, "window half-width in frames")->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Record, retrieve and reconstruct articulated gaussian avatars"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
    c_synth->add_option("--spec", synth.spec, "scene spec JSON")->required();
    c_synth->add_option("--out", synth.out, "output directory")->required();
    c_synth->add_option("--seed", synth.seed, "override the scene seed");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "fit an avatar to a dataset");
    c_train->add_option("--dataset", tr.dataset, "dataset directory")->required();
    c_train->add_option("--config", tr.config, "run config JSON")->required();
    c_train->add_option("--out", tr.out, "output archive")->required();
    c_train->add_option("--seed", tr.seed, "override the avatar and training seeds");
    c_train->add_option("--loss-log", tr.loss_log, "loss CSV (default: <out>.loss.csv)");

    RenderArgs rd;
    auto* c_render = app.add_subcommand("render", "render a recorded frame");
    c_render->add_option("--avatar", rd.avatar, "avatar archive")->required();
    c_render->add_option("--frame", rd.frame, "training frame index")->required();
    c_render->add_option("--pose-track", rd.pose_track, "pose track (.csv or .json)")->required();
    c_render->add_option("--camera", rd.camera, "camera JSON")->required();
    c_render->add_option("--camera-index", rd.camera_index, "entry of a camera array");
    c_render->add_option("--out", rd.out, "output image (.png or .r3im)")->required();

    RetrieveArgs an;
    auto* c_anim = app.add_subcommand("animate", "drive an avatar with novel poses");
    c_anim->add_option("--avatar", an.avatar, "avatar archive")->required();
    c_anim->add_option("--novel-poses", an.novel, "pose track (.csv or .json)")->required();
    c_anim->add_option("--camera", an.camera, "camera JSON")->required();
    c_anim->add_option("--camera-index", an.camera_index, "entry of a camera array");
    c_anim->add_option("--out", an.out, "output directory")->required();
    c_anim->add_flag("--no-smoothing", an.no_smoothing, "disable feature smoothing at jitters");
    c_anim->add_option("--format", an.format, "png, raw or both")
        ->check(CLI::IsMember({"png", "raw", "both"}))
        ->capture_default_str();
    add_retrieval_flags(c_anim, an);

    RetrieveArgs rt;
    auto* c_ret = app.add_subcommand("retrieve", "retrieve timestamps only");
    c_ret->add_option("--avatar", rt.avatar, "avatar archive")->required();
    c_ret->add_option("--novel-poses", rt.novel, "pose track (.csv or .json)")->required();
    c_ret->add_option("--emit-curve", rt.curve, "output trace CSV")->required();
    add_retrieval_flags(c_ret, rt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (c_synth->parsed()) run_synth(synth);
        else if (c_train->parsed()) run_train(tr);
        else if (c_render->parsed()) run_render(rd);
        else if (c_anim->parsed()) run_animate(an);
        else if (c_ret->parsed()) run_retrieve(rt);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "invalid configuration: %s\n", e.what());
        return kExitInput;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "invalid input: %s\n", e.what());
        return kExitInput;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "invalid usage: %s\n", e.what());
        return kExitInput;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "invalid value: %s\n", e.what());
        return kExitInput;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "invalid JSON: %s\n", e.what());
        return kExitInput;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "file error: %s\n", e.what());
        return kExitInput;
    }
    return 0;
}
