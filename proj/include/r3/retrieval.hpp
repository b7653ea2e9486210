// SPDX-License-Identifier: Apache-2.0
//
// Pose-sequence retrieval: maps a stream of novel poses to real-valued
// training timestamps per body part, with a sliding window around the last
// retrieved timestamp and jitter bookkeeping for feature smoothing.
#pragma once

#include "r3/skinning.hpp"

#include <array>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

namespace r3 {

/// Matching key {dp(i-1), dp(i), p(i)} of one body part, flattened. dp is the per-joint
/// relative rotation log map between consecutive frames, p the joints' axis-angles.
struct DeltaPoseSequence {
    Eigen::VectorXd values;
};

/// Relative rotation log map between two local joint rotations.
Eigen::Vector3d relative_rotation(const Eigen::Vector3d& from, const Eigen::Vector3d& to);

/// Key for frame `i` of `track` restricted to `joints`; needs i >= 2.
DeltaPoseSequence make_sequence(const PoseTrack& track, std::size_t i,
                                const std::vector<int>& joints);

class PoseSequenceIndex {
  public:
    struct PartEntries {
        BodyPart part = BodyPart::CenterBody;
        std::vector<int> joints;
        std::vector<int> timestamps; ///< strictly increasing
        std::vector<DeltaPoseSequence> keys;
    };

    PoseSequenceIndex() = default;
    PoseSequenceIndex(std::vector<PartEntries> parts, int joint_count)
        : parts_(std::move(parts)), joint_count_(joint_count) {}

    const std::vector<PartEntries>& parts() const { return parts_; }
    /// nullptr when the skeleton has no joint in `part`.
    const PartEntries* find(BodyPart part) const;
    int joint_count() const { return joint_count_; }
    std::size_t entry_count() const { return parts_.empty() ? 0 : parts_.front().keys.size(); }

  private:
    std::vector<PartEntries> parts_;
    int joint_count_ = 0;
};

/// One entry per part for every training frame i >= 2, timestamp = frame_index.
PoseSequenceIndex build_index(const PoseTrack& training, const Skeleton& skel);

struct RetrievalParams {
    int k = 20;
    double window = 3.0;
    void validate() const;
};

struct RetrievalState {
    std::array<std::optional<double>, kBodyPartCount> history;
    std::vector<std::pair<int, BodyPart>> jitters; ///< (output frame, part)
};

struct RetrievalResult {
    double timestamp = 0;
    bool jitter = false;
};

/// One step of the retrieval algorithm for `part`. `frame` only labels jitter records.
RetrievalResult retrieve_timestamp(const PoseSequenceIndex& index, RetrievalState& state,
                                   const DeltaPoseSequence& query, BodyPart part,
                                   const RetrievalParams& params, int frame = 0);

struct TraceEntry {
    double timestamp = 0;
    bool jitter = false;
    bool has_pair = false;
    double t_before = 0, t_after = 0;
};

/// entries[f][p] belongs to frames[f] and parts[p].
struct RetrievalTrace {
    std::vector<int> frames;
    std::vector<BodyPart> parts;
    std::vector<std::vector<TraceEntry>> entries;

    std::size_t jitter_count() const;
    std::optional<std::size_t> part_slot(BodyPart part) const;
    bool operator==(const RetrievalTrace& o) const;
};

/// Streams every novel frame from the third onward through retrieve_timestamp and
/// attaches smoothing pairs to jitter-flagged entries.
RetrievalTrace retrieve_track(const PoseSequenceIndex& index, const PoseTrack& novel,
                              const RetrievalParams& params);

/// CSV with header frame,part,timestamp,jitter,t_before,t_after.
void write_trace_csv(std::ostream& out, const RetrievalTrace& trace);

} // namespace r3
