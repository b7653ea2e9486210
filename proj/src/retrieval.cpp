// SPDX-License-Identifier: Apache-2.0
#include "r3/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace r3 {

Eigen::Vector3d relative_rotation(const Eigen::Vector3d& from, const Eigen::Vector3d& to) {
    const Eigen::Matrix3d rel =
        axis_angle_to_matrix<double>(from).transpose() * axis_angle_to_matrix<double>(to);
    return matrix_to_axis_angle<double>(rel);
}

DeltaPoseSequence make_sequence(const PoseTrack& track, std::size_t i,
                                const std::vector<int>& joints) {
    if (i < 2 || i >= track.size()) throw UsageError("retrieval: sequence needs two prior frames");
    const auto& p0 = track[i - 2];
    const auto& p1 = track[i - 1];
    const auto& p2 = track[i];
    DeltaPoseSequence s;
    s.values.resize(Eigen::Index(joints.size() * 9));
    Eigen::Index o = 0;
    for (const int j : joints) {
        const auto uj = std::size_t(j);
        if (uj >= p0.thetas.size() || uj >= p1.thetas.size() || uj >= p2.thetas.size())
            throw ConfigError("retrieval: pose has fewer joints than the skeleton");
        s.values.segment<3>(o) = relative_rotation(p0.thetas[uj], p1.thetas[uj]);
        s.values.segment<3>(o + 3) = relative_rotation(p1.thetas[uj], p2.thetas[uj]);
        s.values.segment<3>(o + 6) = p2.thetas[uj];
        o += 9;
    }
    if (!s.values.allFinite()) throw DomainError("retrieval: non-finite pose");
    return s;
}

const PoseSequenceIndex::PartEntries* PoseSequenceIndex::find(BodyPart part) const {
    for (const auto& p : parts_)
        if (p.part == part) return &p;
    return nullptr;
}

PoseSequenceIndex build_index(const PoseTrack& training, const Skeleton& skel) {
    if (training.size() < 3) throw UsageError("retrieval: index needs at least 3 training frames");
    for (std::size_t i = 0; i < training.size(); ++i) {
        if (int(training[i].thetas.size()) != skel.size())
            throw ConfigError("retrieval: pose joint count does not match the skeleton");
        if (i > 0 && training[i].frame_index <= training[i - 1].frame_index)
            throw ConfigError("retrieval: training frame indices must increase");
    }
    std::vector<PoseSequenceIndex::PartEntries> parts;
    for (const BodyPart part : skel.parts_present()) {
        PoseSequenceIndex::PartEntries e;
        e.part = part;
        e.joints = skel.joints_of(part);
        for (std::size_t i = 2; i < training.size(); ++i) {
            e.timestamps.push_back(training[i].frame_index);
            e.keys.push_back(make_sequence(training, i, e.joints));
        }
        parts.push_back(std::move(e));
    }
    return PoseSequenceIndex(std::move(parts), skel.size());
}

void RetrievalParams::validate() const {
    if (k < 2) throw ConfigError("retrieval: k must be >= 2");
    if (!(window >= 1.0)) throw ConfigError("retrieval: window must be >= 1");
}

RetrievalResult retrieve_timestamp(const PoseSequenceIndex& index, RetrievalState& state,
                                   const DeltaPoseSequence& query, BodyPart part,
                                   const RetrievalParams& params, int frame) {
    params.validate();
    const auto* entries = index.find(part);
    if (!entries || entries->keys.empty()) throw UsageError("retrieval: empty index for part");
    const std::size_t n = entries->keys.size();
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (entries->keys[i].values.size() != query.values.size())
            throw ConfigError("retrieval: query length does not match the index");
        dist[i] = (entries->keys[i].values - query.values).norm();
    }
    // Entries are stored by ascending timestamp, so a stable sort breaks ties by time.
    std::vector<std::size_t> rank(n);
    std::iota(rank.begin(), rank.end(), std::size_t(0));
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    rank.resize(std::min(n, std::size_t(params.k)));

    auto& history = state.history[std::size_t(part)];
    const auto ts = [&](std::size_t i) { return double(entries->timestamps[i]); };
    RetrievalResult r;
    if (!history) {
        r.timestamp = ts(rank.front());
        history = r.timestamp;
        return r;
    }
    std::vector<std::size_t> valid;
    for (const std::size_t i : rank)
        if (std::abs(ts(i) - *history) < params.window) valid.push_back(i);

    if (valid.size() >= 2) {
        const double d1 = dist[valid[0]], d2 = dist[valid[1]];
        const double t1 = ts(valid[0]), t2 = ts(valid[1]);
        const double sum = d1 + d2;
        r.timestamp = sum > 0 ? d2 / sum * t1 + d1 / sum * t2 : 0.5 * (t1 + t2);
    } else if (valid.size() == 1) {
        r.timestamp = ts(valid[0]);
    } else {
        r.timestamp = ts(rank.front());
        r.jitter = true;
        state.jitters.emplace_back(frame, part);
    }
    history = r.timestamp;
    return r;
}

std::size_t RetrievalTrace::jitter_count() const {
    std::size_t n = 0;
    for (const auto& row : entries)
        for (const auto& e : row) n += e.jitter ? 1 : 0;
    return n;
}

std::optional<std::size_t> RetrievalTrace::part_slot(BodyPart part) const {
    for (std::size_t i = 0; i < parts.size(); ++i)
        if (parts[i] == part) return i;
    return std::nullopt;
}

bool RetrievalTrace::operator==(const RetrievalTrace& o) const {
    if (frames != o.frames || parts != o.parts || entries.size() != o.entries.size()) return false;
    for (std::size_t f = 0; f < entries.size(); ++f)
        for (std::size_t p = 0; p < entries[f].size(); ++p) {
            const auto &a = entries[f][p], &b = o.entries[f][p];
            if (a.timestamp != b.timestamp || a.jitter != b.jitter || a.has_pair != b.has_pair ||
                a.t_before != b.t_before || a.t_after != b.t_after)
                return false;
        }
    return true;
}

RetrievalTrace retrieve_track(const PoseSequenceIndex& index, const PoseTrack& novel,
                              const RetrievalParams& params) {
    params.validate();
    if (novel.size() < 3) throw UsageError("retrieval: novel track needs at least 3 frames");
    for (const auto& p : novel)
        if (int(p.thetas.size()) != index.joint_count())
            throw ConfigError("retrieval: novel pose joint count does not match the index");
    RetrievalTrace trace;
    for (const auto& part : index.parts()) trace.parts.push_back(part.part);
    RetrievalState state;
    for (std::size_t i = 2; i < novel.size(); ++i) {
        trace.frames.push_back(novel[i].frame_index);
        std::vector<TraceEntry> row;
        for (const auto& part : index.parts()) {
            const auto r = retrieve_timestamp(index, state, make_sequence(novel, i, part.joints),
                                              part.part, params, novel[i].frame_index);
            TraceEntry e;
            e.timestamp = r.timestamp;
            e.jitter = r.jitter;
            row.push_back(e);
        }
        trace.entries.push_back(std::move(row));
    }
    const std::size_t frames = trace.entries.size();
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t p = 0; p < trace.parts.size(); ++p) {
            auto& e = trace.entries[f][p];
            if (!e.jitter || frames < 2) continue;
            const std::size_t before = f > 0 ? f - 1 : f + 1;
            const std::size_t after = f + 1 < frames ? f + 1 : f - 1;
            e.has_pair = true;
            e.t_before = trace.entries[before][p].timestamp;
            e.t_after = trace.entries[after][p].timestamp;
        }
    return trace;
}

void write_trace_csv(std::ostream& out, const RetrievalTrace& trace) {
    out << "frame,part,timestamp,jitter,t_before,t_after\n";
    char buf[64];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (std::size_t f = 0; f < trace.frames.size(); ++f)
        for (std::size_t p = 0; p < trace.parts.size(); ++p) {
            const auto& e = trace.entries[f][p];
            out << trace.frames[f] << ',' << part_name(trace.parts[p]) << ',' << num(e.timestamp)
                << ',' << (e.jitter ? 1 : 0) << ',';
            if (e.has_pair) out << num(e.t_before) << ',' << num(e.t_after);
            else out << ',';
            out << '\n';
        }
}

} // namespace r3
