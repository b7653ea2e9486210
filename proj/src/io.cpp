// SPDX-License-Identifier: Apache-2.0
#include "r3/io.hpp"

#include "binary.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace r3 {

namespace {

template <typename T> void optional_field(const Json& j, const char* key, T& v) {
    if (j.contains(key)) v = j.at(key).get<T>();
}

Eigen::Vector3d vec3_from(const Json& j) {
    if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-element array");
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

Json vec3_to(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

void optional_vec3(const Json& j, const char* key, Eigen::Vector3d& v) {
    if (j.contains(key)) v = vec3_from(j.at(key));
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

Json skeleton_to_json(const Skeleton& skel) {
    Json joints = Json::array();
    for (const auto& jt : skel.joints())
        joints.push_back({{"name", jt.name},
                          {"parent", jt.parent},
                          {"rest_position", vec3_to(jt.rest_position)},
                          {"part", part_name(jt.part)}});
    return {{"joints", joints}};
}

Skeleton skeleton_from_json(const Json& j) {
    if (!j.contains("joints") || !j.at("joints").is_array())
        throw FormatError("skeleton: missing 'joints' array");
    std::vector<Joint> joints;
    for (const auto& e : j.at("joints")) {
        Joint jt;
        jt.name = e.at("name").get<std::string>();
        jt.parent = e.at("parent").get<int>();
        jt.rest_position = vec3_from(e.at("rest_position"));
        const auto label = e.at("part").get<std::string>();
        const auto part = parse_part(label);
        if (!part) throw FormatError("skeleton: unknown part label '" + label + "'");
        jt.part = *part;
        joints.push_back(std::move(jt));
    }
    try {
        return Skeleton(std::move(joints));
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
}

Json camera_to_json(const Camera<double>& c) {
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r)
        rot.push_back(Json::array({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2)}));
    return {{"fx", c.fx},       {"fy", c.fy},         {"cx", c.cx},
            {"cy", c.cy},       {"width", c.width},   {"height", c.height},
            {"rotation", rot},  {"translation", vec3_to(c.translation)},
            {"near", c.near_plane}, {"far", c.far_plane}};
}

Camera<double> camera_from_json(const Json& j) {
    Camera<double> c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const auto& rot = j.at("rotation");
    if (!rot.is_array() || rot.size() != 3) throw FormatError("camera: rotation must be 3x3");
    for (int r = 0; r < 3; ++r) c.rotation.row(r) = vec3_from(rot.at(std::size_t(r))).transpose();
    c.translation = vec3_from(j.at("translation"));
    optional_field(j, "near", c.near_plane);
    optional_field(j, "far", c.far_plane);
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
    return c;
}

Json pose_to_json(const Pose& p) {
    Json thetas = Json::array();
    for (const auto& t : p.thetas) thetas.push_back(vec3_to(t));
    return {{"frame_index", p.frame_index},
            {"root_translation", vec3_to(p.root_translation)},
            {"thetas", thetas}};
}

Pose pose_from_json(const Json& j) {
    Pose p;
    p.frame_index = j.at("frame_index").get<int>();
    p.root_translation = vec3_from(j.at("root_translation"));
    for (const auto& t : j.at("thetas")) p.thetas.push_back(vec3_from(t));
    return p;
}

void write_pose_csv(const fs::path& path, const PoseTrack& track) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    const std::size_t k = track.empty() ? 0 : track.front().thetas.size();
    out << "frame_index,root_x,root_y,root_z";
    for (std::size_t j = 0; j < k; ++j) out << ",j" << j << "_x,j" << j << "_y,j" << j << "_z";
    out << '\n';
    for (const auto& p : track) {
        if (p.thetas.size() != k) throw ConfigError("pose csv: inconsistent joint counts");
        out << p.frame_index;
        for (int a = 0; a < 3; ++a) out << ',' << format_double(p.root_translation[a]);
        for (const auto& t : p.thetas)
            for (int a = 0; a < 3; ++a) out << ',' << format_double(t[a]);
        out << '\n';
    }
}

PoseTrack read_pose_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("frame_index", 0) != 0)
        throw FormatError(path.string() + ": missing pose csv header");
    const auto columns = std::size_t(std::count(line.begin(), line.end(), ',')) + 1;
    if (columns < 4 || (columns - 4) % 3 != 0)
        throw FormatError(path.string() + ": header must list root and per-joint xyz columns");
    const std::size_t joints = (columns - 4) / 3;
    PoseTrack track;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double x = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw FormatError(path.string() + ": bad number on row " + std::to_string(row));
            v.push_back(x);
        }
        if (v.size() != columns)
            throw FormatError(path.string() + ": wrong column count on row " + std::to_string(row));
        Pose p;
        p.frame_index = int(v[0]);
        p.root_translation = {v[1], v[2], v[3]};
        for (std::size_t j = 0; j < joints; ++j)
            p.thetas.emplace_back(v[4 + 3 * j], v[5 + 3 * j], v[6 + 3 * j]);
        if (!p.root_translation.allFinite() ||
            std::any_of(p.thetas.begin(), p.thetas.end(), [](const auto& t) { return !t.allFinite(); }))
            throw FormatError(path.string() + ": non-finite pose on row " + std::to_string(row));
        track.push_back(std::move(p));
    }
    return track;
}

PoseTrack read_pose_track(const fs::path& path) {
    if (path.extension() == ".json") {
        PoseTrack t;
        for (const auto& e : read_json(path)) t.push_back(pose_from_json(e));
        return t;
    }
    return read_pose_csv(path);
}

void write_pose_track(const fs::path& path, const PoseTrack& track) {
    if (path.extension() == ".json") {
        Json arr = Json::array();
        for (const auto& p : track) arr.push_back(pose_to_json(p));
        write_json(path, arr);
    } else {
        write_pose_csv(path, track);
    }
}

Json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

Camera<double> read_camera(const fs::path& path, int index) {
    const Json j = read_json(path);
    if (j.is_array()) {
        if (index < 0 || std::size_t(index) >= j.size())
            throw FormatError(path.string() + ": camera index out of range");
        return camera_from_json(j.at(std::size_t(index)));
    }
    return camera_from_json(j);
}

std::vector<Camera<double>> read_cameras(const fs::path& path) {
    const Json j = read_json(path);
    if (!j.is_array()) throw FormatError(path.string() + ": expected an array of cameras");
    std::vector<Camera<double>> cams;
    for (const auto& e : j) cams.push_back(camera_from_json(e));
    return cams;
}

void write_cameras(const fs::path& path, const std::vector<Camera<double>>& cams) {
    Json arr = Json::array();
    for (const auto& c : cams) arr.push_back(camera_to_json(c));
    write_json(path, arr);
}

void write_png(const fs::path& path, const Image<float>& img) {
    std::vector<unsigned char> buf(std::size_t(img.pixel_count()) * 3);
    for (Eigen::Index i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c)
            buf[std::size_t(i * 3 + c)] = static_cast<unsigned char>(
                std::floor(std::clamp(img.rgb(i, c), 0.0f, 1.0f) * 255.0f + 0.5f));
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = png_uint_32(img.width);
    image.height = png_uint_32(img.height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw FormatError("cannot write PNG " + path.string() + ": " + image.message);
}

Image<float> read_png(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
        throw FormatError("cannot decode PNG " + path.string() + ": " + image.message);
    Image<float> img(int(image.width), int(image.height));
    for (Eigen::Index i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c) img.rgb(i, c) = float(buf[std::size_t(i * 3 + c)]) / 255.0f;
    return img;
}

void write_raw_image(const fs::path& path, const Image<float>& img) {
    bin::Writer w;
    w.magic("R3IM");
    w.u32(std::uint32_t(img.width));
    w.u32(std::uint32_t(img.height));
    w.f32_block(img.rgb);
    bin::write_file(path, w.data());
}

Image<float> read_raw_image(const fs::path& path) {
    const std::string data = bin::read_file(path);
    bin::Reader r(data, path.string());
    r.expect("R3IM");
    const auto w = r.u32(), h = r.u32();
    if (std::size_t(w) * h * 12 != r.remaining()) throw FormatError(path.string() + ": size mismatch");
    Image<float> img(static_cast<int>(w), static_cast<int>(h));
    r.f32_block(img.rgb);
    return img;
}

void from_json(const Json& j, HexPlaneConfig& c) {
    optional_field(j, "resolutions", c.resolutions);
    optional_field(j, "time_resolution", c.time_resolution);
    optional_field(j, "channels", c.channels);
    optional_field(j, "init_epsilon", c.init_epsilon);
}

void from_json(const Json& j, DecoderConfig& c) {
    optional_field(j, "depth", c.depth);
    optional_field(j, "width", c.width);
    optional_field(j, "max_offset", c.max_offset);
    optional_field(j, "init_opacity", c.init_opacity);
    optional_field(j, "init_scale", c.init_scale);
    optional_field(j, "output_init_scale", c.output_init_scale);
}

void from_json(const Json& j, BlendFieldConfig& c) {
    optional_field(j, "depth", c.depth);
    optional_field(j, "width", c.width);
    optional_field(j, "output_init_scale", c.output_init_scale);
}

void from_json(const Json& j, AvatarConfig& c) {
    optional_field(j, "codebook", c.codebook);
    optional_field(j, "decoder", c.decoder);
    optional_field(j, "blend", c.blend);
    optional_field(j, "sh_degree", c.sh_degree);
    optional_field(j, "gaussian_count", c.gaussian_count);
    optional_field(j, "capsule_radius", c.capsule_radius);
    optional_field(j, "bbox_margin", c.bbox_margin);
    optional_vec3(j, "init_color", c.init_color);
    optional_field(j, "seed", c.seed);
}

void from_json(const Json& j, LearningRates& r) {
    optional_field(j, "planes", r.planes);
    optional_field(j, "decoder", r.decoder);
    optional_field(j, "sh", r.sh);
    optional_field(j, "positions", r.positions);
    optional_field(j, "blend", r.blend);
    optional_field(j, "opacity_bias", r.opacity_bias);
}

void from_json(const Json& j, TrainingConfig& c) {
    optional_field(j, "iterations", c.iterations);
    optional_field(j, "rates", c.rates);
    optional_field(j, "lambda_ssim", c.lambda_ssim);
    optional_field(j, "prune_interval", c.prune_interval);
    optional_field(j, "prune_opacity", c.prune_opacity);
    optional_field(j, "prune_scale_fraction", c.prune_scale_fraction);
    optional_field(j, "opacity_reset_interval", c.opacity_reset_interval);
    optional_field(j, "reset_opacity", c.reset_opacity);
    optional_field(j, "density_until", c.density_until);
    optional_field(j, "seed", c.seed);
    optional_field(j, "pose_conditioned", c.pose_conditioned);
    optional_field(j, "adam_beta1", c.adam_beta1);
    optional_field(j, "adam_beta2", c.adam_beta2);
    optional_field(j, "adam_epsilon", c.adam_epsilon);
    optional_field(j, "tile_size", c.render.tile_size);
    optional_vec3(j, "background", c.render.background);
}

void from_json(const Json& j, SplitSpec& s) {
    optional_field(j, "train_begin", s.train_begin);
    optional_field(j, "train_end", s.train_end);
    optional_field(j, "novel_begin", s.novel_begin);
    optional_field(j, "novel_end", s.novel_end);
    optional_field(j, "train_views", s.train_views);
    optional_field(j, "test_views", s.test_views);
}

Json to_json(const SplitSpec& s) {
    return {{"train_begin", s.train_begin}, {"train_end", s.train_end},
            {"novel_begin", s.novel_begin}, {"novel_end", s.novel_end},
            {"train_views", s.train_views}, {"test_views", s.test_views}};
}

void from_json(const Json& j, SynthSceneSpec& s) {
    if (j.contains("skeleton")) s.skeleton = skeleton_from_json(j.at("skeleton"));
    if (j.contains("motion")) {
        const auto& m = j.at("motion");
        optional_field(m, "period", s.motion.period);
        optional_field(m, "joint_amplitude", s.motion.joint_amplitude);
        optional_field(m, "root_bounce", s.motion.root_bounce);
        optional_field(m, "appendage_amplitude", s.motion.appendage_amplitude);
        optional_field(m, "appendage_period", s.motion.appendage_period);
        optional_field(m, "appendage_phase", s.motion.appendage_phase);
        optional_field(m, "novel_from", s.motion.novel_from);
        optional_field(m, "novel_phase_shift", s.motion.novel_phase_shift);
    }
    if (j.contains("appendage")) {
        const auto& a = j.at("appendage");
        optional_field(a, "count", s.appendage.count);
        optional_vec3(a, "anchor", s.appendage.anchor);
        optional_field(a, "spread", s.appendage.spread);
        optional_vec3(a, "color", s.appendage.color);
    }
    if (j.contains("cameras")) {
        const auto& c = j.at("cameras");
        optional_field(c, "count", s.cameras.count);
        optional_field(c, "radius", s.cameras.radius);
        optional_field(c, "height", s.cameras.height);
        optional_field(c, "focal", s.cameras.focal);
        optional_vec3(c, "target", s.cameras.target);
    }
    optional_field(j, "frame_count", s.frame_count);
    optional_field(j, "width", s.width);
    optional_field(j, "height", s.height);
    optional_field(j, "body_gaussians", s.body_gaussians);
    optional_field(j, "body_radius", s.body_radius);
    optional_vec3(j, "background", s.background);
    optional_field(j, "seed", s.seed);
    optional_field(j, "split", s.split);
}

Json to_json(const SynthSceneSpec& s) {
    const auto& m = s.motion;
    return {{"skeleton", skeleton_to_json(s.skeleton)},
            {"motion",
             {{"period", m.period},
              {"joint_amplitude", m.joint_amplitude},
              {"root_bounce", m.root_bounce},
              {"appendage_amplitude", m.appendage_amplitude},
              {"appendage_period", m.appendage_period},
              {"appendage_phase", m.appendage_phase},
              {"novel_from", m.novel_from},
              {"novel_phase_shift", m.novel_phase_shift}}},
            {"appendage",
             {{"count", s.appendage.count},
              {"anchor", vec3_to(s.appendage.anchor)},
              {"spread", s.appendage.spread},
              {"color", vec3_to(s.appendage.color)}}},
            {"cameras",
             {{"count", s.cameras.count},
              {"radius", s.cameras.radius},
              {"height", s.cameras.height},
              {"focal", s.cameras.focal},
              {"target", vec3_to(s.cameras.target)}}},
            {"frame_count", s.frame_count},
            {"width", s.width},
            {"height", s.height},
            {"body_gaussians", s.body_gaussians},
            {"body_radius", s.body_radius},
            {"background", vec3_to(s.background)},
            {"seed", s.seed},
            {"split", to_json(s.split)}};
}

RunConfig read_run_config(const fs::path& path) {
    const Json j = read_json(path);
    RunConfig rc;
    try {
        if (j.contains("avatar")) rc.avatar = j.at("avatar").get<AvatarConfig>();
        if (j.contains("training")) rc.training = j.at("training").get<TrainingConfig>();
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return rc;
}

namespace {
fs::path image_path(const fs::path& dir, int view, int frame) {
    return dir / "images" / ("view" + std::to_string(view)) / ("frame" + std::to_string(frame) + ".png");
}
} // namespace

void write_dataset(const fs::path& dir, const SynthDataset& data) {
    fs::create_directories(dir);
    write_cameras(dir / "cameras.json", data.cameras);
    write_json(dir / "skeleton.json", skeleton_to_json(data.spec.skeleton));
    write_pose_csv(dir / "poses.csv", data.poses);
    write_json(dir / "split.json", to_json(data.spec.split));
    write_json(dir / "spec.json", to_json(data.spec));
    for (std::size_t v = 0; v < data.images.size(); ++v) {
        fs::create_directories(dir / "images" / ("view" + std::to_string(v)));
        for (std::size_t f = 0; f < data.images[v].size(); ++f)
            write_png(image_path(dir, int(v), data.poses[f].frame_index), data.images[v][f]);
    }
    write_ground_truth(dir / "gt_gaussians.bin", data.gt);
}

LoadedDataset read_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError("dataset: " + dir.string() + " is not a directory");
    for (const char* name : {"cameras.json", "skeleton.json", "poses.csv"})
        if (!fs::exists(dir / name)) throw FormatError("dataset: missing " + (dir / name).string());
    LoadedDataset d;
    try {
        d.cameras = read_cameras(dir / "cameras.json");
        d.skeleton = skeleton_from_json(read_json(dir / "skeleton.json"));
        if (fs::exists(dir / "split.json")) d.split = read_json(dir / "split.json").get<SplitSpec>();
    } catch (const Json::exception& e) {
        throw FormatError("dataset: " + std::string(e.what()));
    }
    d.poses = read_pose_csv(dir / "poses.csv");
    if (d.cameras.empty() || d.poses.empty()) throw FormatError("dataset: no cameras or poses");
    for (const auto& p : d.poses)
        if (int(p.thetas.size()) != d.skeleton.size())
            throw FormatError("dataset: pose joint count does not match the skeleton");
    d.images.resize(d.cameras.size());
    for (std::size_t v = 0; v < d.cameras.size(); ++v)
        for (const auto& p : d.poses) {
            const auto path = image_path(dir, int(v), p.frame_index);
            if (!fs::exists(path)) throw FormatError("dataset: missing " + path.string());
            auto img = read_png(path);
            if (img.width != d.cameras[v].width || img.height != d.cameras[v].height)
                throw FormatError("dataset: " + path.string() + " does not match its camera size");
            d.images[v].push_back(std::move(img));
        }
    return d;
}

void write_ground_truth(const fs::path& path, const GroundTruthGaussians& gt) {
    bin::Writer w;
    w.magic("R3GT");
    w.u32(1);
    w.u32(std::uint32_t(gt.size()));
    w.u32(std::uint32_t(gt.offsets.size()));
    w.f64_block(gt.base);
    w.f64_block(gt.rotations);
    w.f64_block(gt.scales);
    w.f64_block(gt.opacities);
    w.f64_block(gt.colors);
    w.u32(std::uint32_t(gt.weights.cols()));
    w.f64_block(gt.weights);
    for (const auto a : gt.appendage) w.bytes(&a, 1);
    for (const auto& o : gt.offsets) w.f64_block(o);
    bin::write_file(path, w.data());
}

GroundTruthGaussians read_ground_truth(const fs::path& path) {
    const std::string data = bin::read_file(path);
    bin::Reader r(data, path.string());
    r.expect("R3GT");
    if (r.u32() != 1) throw FormatError(path.string() + ": unsupported version");
    const auto n = r.count(8 * 15);
    const auto frames = r.count(0);
    GroundTruthGaussians gt;
    gt.base.resize(n, 3);
    gt.rotations.resize(n, 4);
    gt.scales.resize(n, 3);
    gt.opacities.resize(n);
    gt.colors.resize(n, 3);
    r.f64_block(gt.base);
    r.f64_block(gt.rotations);
    r.f64_block(gt.scales);
    r.f64_block(gt.opacities);
    r.f64_block(gt.colors);
    const auto k = r.count(8 * std::size_t(std::max<std::uint32_t>(n, 1)));
    gt.weights.resize(n, k);
    r.f64_block(gt.weights);
    gt.appendage.resize(n);
    for (auto& a : gt.appendage) r.bytes(&a, 1);
    if (r.remaining() != std::size_t(frames) * n * 24)
        throw FormatError(path.string() + ": offset block size mismatch");
    for (std::uint32_t f = 0; f < frames; ++f) {
        Points<double> o(n, 3);
        r.f64_block(o);
        gt.offsets.push_back(std::move(o));
    }
    return gt;
}

} // namespace r3
