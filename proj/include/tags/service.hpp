#pragma once

#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "json.hpp"
#include "tags/pipeline.hpp"
#include "tags/rle.hpp"

namespace httplib {
class Server;
}

namespace tags {

/// Error surfaced to HTTP clients as {"error": {"code", "message"}}.
class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}
    int status() const { return status_; }
    const std::string& code() const { return code_; }

private:
    int status_;
    std::string code_;
};

/// Mutual exclusion granted in arrival order.
class FifoMutex {
public:
    void lock();
    void unlock();

private:
    std::mutex m_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
};

struct SliceImage {
    int axis = 0;
    int index = 0;
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> pixels;  ///< row-major, 8-bit
    std::map<std::string, Rle> overlays;
};

/// Session state and endpoint logic. `mount` wires the handlers into an
/// httplib server:
///   POST /volumes                  multipart (image, organ[, tumor]) or JSON paths
///   GET  /volumes/{id}
///   GET  /volumes/{id}/slice?axis=z|y|x&index=N&channel=image|organ[&format=pgm]
///   POST /volumes/{id}/segment     {"points": [{"z","y","x","label"}, ...]}
///   GET  /health
class SegmentationService {
public:
    /// Without a checkpoint every segment request answers 409.
    explicit SegmentationService(std::optional<Checkpoint> ckpt = std::nullopt);

    std::string add_volume(Volume image, MaskVolume organ, std::optional<MaskVolume> tumor);
    nlohmann::json volume_info(const std::string& id) const;
    SliceImage slice(const std::string& id, int axis, int index, const std::string& channel) const;
    nlohmann::json segment(const std::string& id, const std::vector<PointPrompt>& points);
    nlohmann::json health() const;

    /// Parses a POST /volumes or /segment body; throws ServiceError.
    std::string upload(const std::string& body, const std::string& content_type,
                       const std::map<std::string, std::string>& files);
    static std::vector<PointPrompt> parse_points(const nlohmann::json& body);

    void mount(httplib::Server& server);

private:
    struct Session {
        Volume image;
        MaskVolume organ;
        std::optional<MaskVolume> tumor;
        std::optional<MaskVolume> prediction;
    };

    std::shared_ptr<Session> find(const std::string& id) const;

    std::optional<Checkpoint> ckpt_;
    std::optional<TagsModel> model_;
    PreprocessConfig pre_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_id_ = 1;
    FifoMutex model_mutex_;
};

std::string slice_json(const SliceImage& s);
/// Binary 8-bit PGM (P5).
std::string slice_pgm(const SliceImage& s);

/// Blocks serving on host:port.
void serve(SegmentationService& service, const std::string& host, int port);

}  // namespace tags
