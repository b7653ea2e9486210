// SPDX-License-Identifier: Apache-2.0
#include "r3/archive.hpp"

#include "binary.hpp"
#include "r3/io.hpp"

#include <map>
#include <set>

namespace r3 {

namespace {

constexpr std::uint32_t kSectionVersion = 1;

const std::set<std::string> kKnownSections = {"R3MD", "R3SK", "R3PT", "R3CB", "R3GD",
                                              "R3SH", "R3XC", "R3OP", "R3BW", "R3OS"};

struct SectionWriter {
    std::uint32_t count = 0;
    bin::Writer body;

    void add(const char* magic, const bin::Writer& payload) {
        body.magic(magic);
        body.u32(std::uint32_t(payload.size()));
        body.bytes(payload.data().data(), payload.size());
        ++count;
    }
};

bin::Writer section() {
    bin::Writer w;
    w.u32(kSectionVersion);
    return w;
}

template <typename Scalar> void write_mlp(bin::Writer& w, const Mlp<Scalar>& net) {
    w.u32(std::uint32_t(net.depth()));
    w.u32(std::uint32_t(net.width()));
    w.u32(std::uint32_t(net.in_dim()));
    w.u32(std::uint32_t(net.out_dim()));
    for (int l = 0; l < net.layer_count(); ++l) {
        w.f32_block(net.weights()[std::size_t(l)]);
        w.f32_block(net.biases()[std::size_t(l)]);
    }
}

template <typename Scalar> Mlp<Scalar> read_mlp(bin::Reader& r) {
    const auto depth = r.u32(), width = r.u32(), in = r.u32(), out = r.u32();
    if (in == 0 || out == 0 || (depth > 0 && width == 0) || depth > 64)
        throw FormatError(r.context() + ": invalid network shape");
    // Guard the allocation against the remaining payload before building the net.
    std::size_t params = 0;
    std::size_t prev = in;
    for (std::uint32_t l = 0; l <= depth; ++l) {
        const std::size_t next = l == depth ? out : width;
        params += next * prev + next;
        prev = next;
    }
    if (params > r.remaining() / 4) throw FormatError(r.context() + ": truncated network");
    Mlp<Scalar> net(int(in), int(depth), int(width), int(out), 0);
    for (int l = 0; l < net.layer_count(); ++l) {
        r.f32_block(net.weights()[std::size_t(l)]);
        r.f32_block(net.biases()[std::size_t(l)]);
    }
    return net;
}

Json bbox_json(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    return {{"lo", {lo.x(), lo.y(), lo.z()}}, {"hi", {hi.x(), hi.y(), hi.z()}}};
}

template <typename Scalar> Bbox<Scalar> bbox_from(const Json& j) {
    Bbox<Scalar> b;
    for (int a = 0; a < 3; ++a) {
        b.lo[a] = Scalar(j.at("lo").at(std::size_t(a)).get<double>());
        b.hi[a] = Scalar(j.at("hi").at(std::size_t(a)).get<double>());
    }
    return b;
}

template <typename Scalar> Json bbox_to(const Bbox<Scalar>& b) {
    return bbox_json(b.lo.template cast<double>(), b.hi.template cast<double>());
}

void write_poses(bin::Writer& w, const PoseTrack& poses) {
    w.u32(std::uint32_t(poses.size()));
    w.u32(poses.empty() ? 0 : std::uint32_t(poses.front().thetas.size()));
    for (const auto& p : poses) {
        w.u32(std::uint32_t(p.frame_index));
        w.f64_block(p.root_translation);
        for (const auto& t : p.thetas) w.f64_block(t);
    }
}

PoseTrack read_poses(bin::Reader& r) {
    const auto n = r.u32();
    const auto joints = r.u32();
    if (std::size_t(n) * (4 + 24 * (std::size_t(joints) + 1)) > r.remaining())
        throw FormatError(r.context() + ": truncated pose track");
    PoseTrack poses(n);
    for (auto& p : poses) {
        p.frame_index = int(r.u32());
        r.f64_block(p.root_translation);
        p.thetas.resize(joints);
        for (auto& t : p.thetas) r.f64_block(t);
    }
    return poses;
}

void expect_version(bin::Reader& r) {
    const auto v = r.u32();
    if (v != kSectionVersion)
        throw FormatError(r.context() + ": section version " + std::to_string(v) +
                          " is not supported");
}

void check(bool ok, const std::string& context, const char* what) {
    if (!ok) throw FormatError(context + ": " + what);
}

} // namespace

template <typename Scalar>
std::string serialize_avatar(const CanonicalAvatar<Scalar>& a,
                             const std::type_identity_t<OptimizerState<Scalar>>* optimizer) {
    a.validate();
    SectionWriter s;

    {
        const auto& cfg = a.codebook.config();
        const Json md = {
            {"gaussian_count", a.size()},
            {"bbox", bbox_to(a.bbox)},
            {"time_range", {{"first", a.time_range().first}, {"last", a.time_range().last}}},
            {"codebook",
             {{"bbox", bbox_to(a.codebook.bbox())},
              {"resolutions", cfg.resolutions},
              {"time_resolution", cfg.time_resolution},
              {"channels", cfg.channels},
              {"init_epsilon", cfg.init_epsilon}}},
            {"decoder",
             {{"max_offset", double(a.decoder.max_offset())},
              {"max_scale", double(a.decoder.max_scale())}}},
            {"blend", {{"bbox", bbox_to(a.blend.bbox())}}}};
        auto w = section();
        w.string(md.dump());
        s.add("R3MD", w);
    }
    {
        auto w = section();
        w.string(skeleton_to_json(a.skeleton).dump());
        s.add("R3SK", w);
    }
    {
        auto w = section();
        write_poses(w, a.training_poses);
        s.add("R3PT", w);
    }
    {
        auto w = section();
        w.u32(std::uint32_t(a.codebook.scale_count()));
        for (const auto& scale : a.codebook.scales()) {
            const auto& xy = scale[int(PlaneAxes::XY)];
            w.u32(std::uint32_t(xy.height));
            w.u32(std::uint32_t(xy.width));
            w.u32(std::uint32_t(scale[int(PlaneAxes::XT)].height));
            w.u32(std::uint32_t(xy.channels));
            for (const auto& plane : scale) w.f32_block(plane.data);
        }
        s.add("R3CB", w);
    }
    {
        auto w = section();
        write_mlp(w, a.decoder.net());
        s.add("R3GD", w);
    }
    {
        auto w = section();
        w.u32(std::uint32_t(a.colors.size()));
        w.u32(std::uint32_t(a.colors.degree()));
        w.f32_block(a.colors.coeffs());
        s.add("R3SH", w);
    }
    {
        auto w = section();
        w.u32(std::uint32_t(a.size()));
        w.f32_block(a.positions);
        s.add("R3XC", w);
    }
    {
        auto w = section();
        w.u32(std::uint32_t(a.opacity_bias.size()));
        w.f32_block(a.opacity_bias);
        s.add("R3OP", w);
    }
    {
        auto w = section();
        w.u32(std::uint32_t(a.blend.size()));
        w.u32(std::uint32_t(a.blend.joint_count()));
        w.f32_block(a.blend.base_logits());
        write_mlp(w, a.blend.refine());
        s.add("R3BW", w);
    }
    if (optimizer && !optimizer->empty()) {
        auto w = section();
        w.u64(std::uint64_t(optimizer->step));
        w.u32(std::uint32_t(optimizer->first.size()));
        for (std::size_t i = 0; i < optimizer->first.size(); ++i) {
            w.u32(std::uint32_t(optimizer->first[i].rows()));
            w.u32(std::uint32_t(optimizer->first[i].cols()));
            w.f32_block(optimizer->first[i]);
            w.f32_block(optimizer->second[i]);
        }
        s.add("R3OS", w);
    }

    bin::Writer out;
    out.magic("R3AV");
    out.u32(kArchiveVersion);
    out.u32(s.count);
    out.bytes(s.body.data().data(), s.body.size());
    return out.data();
}

template <typename Scalar>
CanonicalAvatar<Scalar> deserialize_avatar(const std::string& bytes, const std::string& context,
                                           std::type_identity_t<OptimizerState<Scalar>>* optimizer) {
    bin::Reader head(bytes, context);
    head.expect("R3AV");
    const auto version = head.u32();
    if (version != kArchiveVersion)
        throw FormatError(context + ": archive version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kArchiveVersion) + ")");
    const auto count = head.u32();

    std::map<std::string, std::string_view> sections;
    std::size_t offset = 12;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string magic = head.magic();
        const auto size = head.u32();
        offset += 8;
        if (!kKnownSections.count(magic))
            throw FormatError(context + ": unknown section '" + magic + "'");
        if (size > head.remaining()) throw FormatError(context + ": truncated section " + magic);
        if (!sections.emplace(magic, std::string_view(bytes).substr(offset, size)).second)
            throw FormatError(context + ": duplicate section " + magic);
        std::string skip(size, '\0');
        head.bytes(skip.data(), size);
        offset += size;
    }
    check(head.done(), context, "trailing bytes after the last section");

    const auto open = [&](const char* magic) {
        const auto it = sections.find(magic);
        if (it == sections.end()) throw FormatError(context + ": missing section " + magic);
        bin::Reader r(it->second, context + " [" + magic + "]");
        expect_version(r);
        return r;
    };
    const auto finish = [](bin::Reader& r) {
        if (!r.done()) throw FormatError(r.context() + ": unexpected trailing bytes");
    };

    CanonicalAvatar<Scalar> a;
    Json md;
    HexPlaneConfig cb_cfg;
    try {
        auto r = open("R3MD");
        md = Json::parse(r.string());
        finish(r);
        a.bbox = bbox_from<Scalar>(md.at("bbox"));
        const auto& c = md.at("codebook");
        cb_cfg.resolutions = c.at("resolutions").get<std::vector<int>>();
        cb_cfg.time_resolution = c.at("time_resolution").get<int>();
        cb_cfg.channels = c.at("channels").get<int>();
        cb_cfg.init_epsilon = c.at("init_epsilon").get<double>();
        auto rs = open("R3SK");
        a.skeleton = skeleton_from_json(Json::parse(rs.string()));
        finish(rs);
    } catch (const Json::exception& e) {
        throw FormatError(context + ": bad metadata: " + e.what());
    }
    const auto n = md.at("gaussian_count").get<Eigen::Index>();
    {
        auto r = open("R3PT");
        a.training_poses = read_poses(r);
        finish(r);
        for (const auto& p : a.training_poses)
            check(int(p.thetas.size()) == a.skeleton.size(), context,
                  "training pose joint count does not match the skeleton");
    }
    {
        auto r = open("R3CB");
        TimeRange range{md.at("time_range").at("first").get<double>(),
                        md.at("time_range").at("last").get<double>()};
        const auto scales = r.u32();
        check(scales == cb_cfg.resolutions.size(), context, "codebook scale count mismatch");
        try {
            a.codebook = HexPlaneCodebook<Scalar>(
                cb_cfg, bbox_from<Scalar>(md.at("codebook").at("bbox")), range, 0);
        } catch (const ConfigError& e) {
            throw FormatError(context + ": " + e.what());
        }
        for (auto& scale : a.codebook.scales()) {
            const auto h = r.u32(), w = r.u32(), t = r.u32(), c = r.u32();
            const auto& xy = scale[int(PlaneAxes::XY)];
            check(int(h) == xy.height && int(w) == xy.width && int(t) == cb_cfg.time_resolution &&
                      int(c) == cb_cfg.channels,
                  context, "codebook plane shape mismatch");
            for (auto& plane : scale) r.f32_block(plane.data);
        }
        finish(r);
    }
    {
        auto r = open("R3GD");
        auto net = read_mlp<Scalar>(r);
        finish(r);
        check(net.in_dim() == a.codebook.feature_dim() && net.out_dim() == kDecoderOutputs, context,
              "decoder dimensions do not match the codebook");
        a.decoder = GaussianDecoder<Scalar>(std::move(net),
                                            Scalar(md.at("decoder").at("max_offset").get<double>()),
                                            Scalar(md.at("decoder").at("max_scale").get<double>()));
    }
    {
        auto r = open("R3SH");
        const auto count = r.u32(), degree = r.u32();
        check(count == n && degree <= 3, context, "color store shape mismatch");
        a.colors = GaussianColorStore<Scalar>(n, int(degree));
        r.f32_block(a.colors.coeffs());
        finish(r);
    }
    {
        auto r = open("R3XC");
        check(r.u32() == n, context, "position count mismatch");
        a.positions.resize(n, 3);
        check(r.remaining() == std::size_t(n) * 12, context, "position block size mismatch");
        r.f32_block(a.positions);
        finish(r);
    }
    {
        auto r = open("R3OP");
        check(r.u32() == n, context, "opacity offset count mismatch");
        check(r.remaining() == std::size_t(n) * 4, context, "opacity block size mismatch");
        a.opacity_bias.resize(n);
        r.f32_block(a.opacity_bias);
        finish(r);
    }
    {
        auto r = open("R3BW");
        const auto count = r.u32(), joints = r.u32();
        check(count == n && int(joints) == a.skeleton.size(), context,
              "blend weight shape mismatch");
        check(std::size_t(n) * joints * 4 <= r.remaining(), context, "truncated blend logits");
        MatX<Scalar> logits(n, joints);
        r.f32_block(logits);
        auto refine = read_mlp<Scalar>(r);
        finish(r);
        a.blend = BlendWeightField<Scalar>(std::move(logits), std::move(refine),
                                           bbox_from<Scalar>(md.at("blend").at("bbox")));
    }
    if (optimizer) {
        *optimizer = {};
        if (sections.count("R3OS")) {
            auto r = open("R3OS");
            optimizer->step = long(r.u64());
            const auto slots = r.count(8);
            for (std::uint32_t i = 0; i < slots; ++i) {
                const auto rows = r.u32(), cols = r.u32();
                check(std::size_t(rows) * cols * 8 <= r.remaining(), context,
                      "truncated optimizer slot");
                MatX<Scalar> m(rows, cols), v(rows, cols);
                r.f32_block(m);
                r.f32_block(v);
                optimizer->first.push_back(std::move(m));
                optimizer->second.push_back(std::move(v));
            }
            finish(r);
        }
    }
    try {
        a.validate();
    } catch (const ConfigError& e) {
        throw FormatError(context + ": " + e.what());
    }
    return a;
}

template <typename Scalar>
void save_avatar(const std::filesystem::path& path, const CanonicalAvatar<Scalar>& avatar,
                 const std::type_identity_t<OptimizerState<Scalar>>* optimizer) {
    const auto data = serialize_avatar(avatar, optimizer);
    auto tmp = path;
    tmp += ".tmp";
    bin::write_file(tmp, data);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw FormatError("cannot move " + tmp.string() + " to " + path.string());
}

template <typename Scalar>
CanonicalAvatar<Scalar> load_avatar(const std::filesystem::path& path,
                                    std::type_identity_t<OptimizerState<Scalar>>* optimizer) {
    return deserialize_avatar<Scalar>(bin::read_file(path), path.string(), optimizer);
}

#define R3_INSTANTIATE(S)                                                                      \
    template std::string serialize_avatar<S>(const CanonicalAvatar<S>&, const OptimizerState<S>*); \
    template CanonicalAvatar<S> deserialize_avatar<S>(const std::string&, const std::string&,   \
                                                      OptimizerState<S>*);                      \
    template void save_avatar<S>(const std::filesystem::path&, const CanonicalAvatar<S>&,       \
                                 const OptimizerState<S>*);                                     \
    template CanonicalAvatar<S> load_avatar<S>(const std::filesystem::path&, OptimizerState<S>*);
R3_INSTANTIATE(float)
R3_INSTANTIATE(double)
#undef R3_INSTANTIATE

} // namespace r3
