#include "tags/service.hpp"

#include <algorithm>
#include <cmath>

#include "httplib.h"
#include "tags/error.hpp"
#include "tags/metrics.hpp"

namespace tags {

using nlohmann::json;

namespace {

constexpr int kMaxPoints = 10;

std::span<const std::uint8_t> as_bytes(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

int parse_axis(const std::string& a) {
    if (a == "z" || a == "0") return 0;
    if (a == "y" || a == "1") return 1;
    if (a == "x" || a == "2") return 2;
    throw ServiceError(400, "bad_request", "axis must be z, y or x");
}

int parse_int(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ServiceError(400, "bad_request", std::string(what) + " must be an integer");
    }
}

// Extracts a 2D slice (rows, cols) of any grid along `axis`.
template <class T, class F>
std::vector<std::uint8_t> take_slice(const Grid3<T>& g, int axis, int index, int& rows, int& cols, F&& map) {
    const Dims3 d = g.dims();
    rows = axis == 0 ? d.h : d.d;
    cols = axis == 2 ? d.h : d.w;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const T v = axis == 0 ? g.at(index, r, c) : (axis == 1 ? g.at(r, index, c) : g.at(r, c, index));
            out[static_cast<std::size_t>(r) * cols + c] = map(v);
        }
    return out;
}

json error_body(const std::string& code, const std::string& message) {
    return {{"error", {{"code", code}, {"message", message}}}};
}

MaskVolume checked_mask(const std::string& bytes, const char* what) {
    try {
        return io::to_mask(io::decode_nifti(as_bytes(bytes)));
    } catch (const std::exception& e) {
        throw ServiceError(400, "invalid_volume", std::string(what) + ": " + e.what());
    }
}

std::filesystem::path resolve_path(const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative()) {
        if (auto root = io::data_root()) return *root / path;
    }
    return path;
}

}  // namespace

void FifoMutex::lock() {
    std::unique_lock<std::mutex> l(m_);
    const std::uint64_t ticket = next_++;
    cv_.wait(l, [&] { return serving_ == ticket; });
}

void FifoMutex::unlock() {
    {
        std::lock_guard<std::mutex> l(m_);
        ++serving_;
    }
    cv_.notify_all();
}

SegmentationService::SegmentationService(std::optional<Checkpoint> ckpt) : ckpt_(std::move(ckpt)) {
    if (ckpt_) {
        model_.emplace(ckpt_->model());
        pre_ = ckpt_->preprocess;
    }
}

std::string SegmentationService::add_volume(Volume image, MaskVolume organ, std::optional<MaskVolume> tumor) {
    if (!(organ.dims() == image.dims())) {
        throw ServiceError(400, "shape_mismatch",
                           "organ mask " + organ.dims().str() + " does not match image " + image.dims().str());
    }
    if (tumor && !(tumor->dims() == image.dims())) {
        throw ServiceError(400, "shape_mismatch",
                           "tumor mask " + tumor->dims().str() + " does not match image " + image.dims().str());
    }
    organ.spacing = image.spacing;
    if (tumor) tumor->spacing = image.spacing;
    auto s = std::make_shared<Session>(Session{std::move(image), std::move(organ), std::move(tumor), std::nullopt});
    std::unique_lock lock(sessions_mutex_);
    const std::string id = "vol-" + std::to_string(next_id_++);
    sessions_[id] = std::move(s);
    return id;
}

std::shared_ptr<SegmentationService::Session> SegmentationService::find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown volume '" + id + "'");
    return it->second;
}

json SegmentationService::volume_info(const std::string& id) const {
    const auto s = find(id);
    const Dims3 d = s->image.dims();
    std::shared_lock lock(sessions_mutex_);
    return {{"id", id},
            {"dims", {d.d, d.h, d.w}},
            {"spacing", s->image.spacing},
            {"origin", s->image.origin},
            {"has_ground_truth", s->tumor.has_value()},
            {"has_prediction", s->prediction.has_value()},
            {"organ_voxels", s->organ.count()}};
}

SliceImage SegmentationService::slice(const std::string& id, int axis, int index, const std::string& channel) const {
    const auto s = find(id);
    if (axis < 0 || axis > 2) throw ServiceError(400, "bad_request", "axis must be 0, 1 or 2");
    const Dims3 d = s->image.dims();
    if (index < 0 || index >= d[axis]) {
        throw ServiceError(404, "out_of_range",
                           "slice index " + std::to_string(index) + " outside [0, " + std::to_string(d[axis]) + ")");
    }
    SliceImage out;
    out.axis = axis;
    out.index = index;
    if (channel == "image" || channel == "0" || channel == "1" || channel.empty()) {
        const double lo = pre_.clip_lo, hi = pre_.clip_hi;
        out.pixels = take_slice(s->image.data, axis, index, out.rows, out.cols, [lo, hi](double v) {
            const double t = (std::clamp(v, lo, hi) - lo) / (hi - lo);
            return static_cast<std::uint8_t>(std::lround(255.0 * t));
        });
    } else if (channel == "organ" || channel == "2") {
        out.pixels = take_slice(s->organ.data, axis, index, out.rows, out.cols,
                                [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
    } else {
        throw ServiceError(400, "bad_request", "channel must be image, organ or 0-2");
    }
    auto overlay = [&](const MaskVolume& m) {
        int r = 0, c = 0;
        const auto px = take_slice(m.data, axis, index, r, c, [](std::uint8_t v) -> std::uint8_t { return v ? 1 : 0; });
        return rle_encode(px, {r, c});
    };
    std::shared_lock lock(sessions_mutex_);
    out.overlays["organ"] = overlay(s->organ);
    if (s->tumor) out.overlays["tumor"] = overlay(*s->tumor);
    if (s->prediction) out.overlays["prediction"] = overlay(*s->prediction);
    return out;
}

json SegmentationService::segment(const std::string& id, const std::vector<PointPrompt>& points) {
    const auto s = find(id);
    if (!model_) throw ServiceError(409, "no_model", "no checkpoint loaded");
    if (points.empty() || static_cast<int>(points.size()) > kMaxPoints) {
        throw ServiceError(400, "invalid_points", "between 1 and 10 points are required");
    }
    const Dims3 d = s->image.dims();
    for (const auto& p : points) {
        if (!d.contains(p.coord.z, p.coord.y, p.coord.x)) {
            throw ServiceError(400, "invalid_points",
                               "point (" + std::to_string(p.coord.z) + "," + std::to_string(p.coord.y) + "," +
                                   std::to_string(p.coord.x) + ") outside volume " + d.str());
        }
    }
    InferResult r;
    {
        std::lock_guard<FifoMutex> lock(model_mutex_);
        r = infer_volume(*model_, pre_, s->image, s->organ, points);
    }
    json slices = json::array();
    for (int z = 0; z < d.d; ++z) {
        std::size_t n = 0;
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) n += r.mask.data.at(z, y, x);
        if (n) slices.push_back({{"z", z}, {"voxels", n}});
    }
    json out{{"id", id},
             {"mask", rle_encode(r.mask.data).to_json()},
             {"voxels", r.mask.count()},
             {"crop_offset", {r.offset.z, r.offset.y, r.offset.x}},
             {"probability", {{"min", r.prob_min}, {"max", r.prob_max}, {"mean", r.prob_mean}}},
             {"slices", slices}};
    json pts = json::array();
    for (const auto& p : points) pts.push_back({p.coord.z, p.coord.y, p.coord.x, label_name(p.label)});
    out["points"] = pts;
    if (s->tumor) {
        out["dice"] = dice(r.mask, *s->tumor);
    } else {
        out["dice"] = nullptr;
    }
    std::unique_lock lock(sessions_mutex_);
    s->prediction = std::move(r.mask);
    return out;
}

json SegmentationService::health() const {
    std::shared_lock lock(sessions_mutex_);
    json out{{"status", "ok"}, {"model_loaded", model_.has_value()}, {"volumes", sessions_.size()}};
    out["config_hash"] = ckpt_ ? json(hex64(ckpt_->config.hash())) : json(nullptr);
    return out;
}

std::vector<PointPrompt> SegmentationService::parse_points(const json& body) {
    if (!body.is_object() || !body.contains("points") || !body["points"].is_array()) {
        throw ServiceError(400, "invalid_points", "body must be {\"points\": [...]}");
    }
    std::vector<PointPrompt> out;
    try {
        for (const auto& p : body["points"]) {
            PointPrompt pp;
            std::string label = "fg";
            if (p.is_array()) {
                if (p.size() < 3 || p.size() > 4) throw InvalidArgument("point arrays are [z, y, x(, label)]");
                pp.coord = {p[0].get<int>(), p[1].get<int>(), p[2].get<int>()};
                if (p.size() == 4) label = p[3].is_string() ? p[3].get<std::string>() : std::to_string(p[3].get<int>());
            } else {
                pp.coord = {p.at("z").get<int>(), p.at("y").get<int>(), p.at("x").get<int>()};
                if (p.contains("label")) {
                    label = p["label"].is_string() ? p["label"].get<std::string>() : std::to_string(p["label"].get<int>());
                }
            }
            pp.label = parse_label(label);
            out.push_back(pp);
        }
    } catch (const std::exception& e) {
        throw ServiceError(400, "invalid_points", e.what());
    }
    return out;
}

std::string SegmentationService::upload(const std::string& body, const std::string& content_type,
                                        const std::map<std::string, std::string>& files) {
    Volume image;
    MaskVolume organ;
    std::optional<MaskVolume> tumor;
    if (!files.empty()) {
        if (!files.count("image") || !files.count("organ")) {
            throw ServiceError(400, "bad_request", "multipart upload needs 'image' and 'organ' files");
        }
        try {
            image = io::decode_nifti(as_bytes(files.at("image")));
        } catch (const std::exception& e) {
            throw ServiceError(400, "invalid_volume", std::string("image: ") + e.what());
        }
        organ = checked_mask(files.at("organ"), "organ");
        if (files.count("tumor")) tumor = checked_mask(files.at("tumor"), "tumor");
    } else {
        if (content_type.find("application/json") == std::string::npos) {
            throw ServiceError(400, "bad_request", "expected multipart/form-data or application/json");
        }
        json j;
        try {
            j = json::parse(body);
            const auto img = j.at("image").get<std::string>();
            const auto org = j.at("organ").get<std::string>();
            image = io::read_volume(resolve_path(img));
            organ = io::read_mask(resolve_path(org));
            if (j.contains("tumor") && !j["tumor"].is_null()) tumor = io::read_mask(resolve_path(j["tumor"].get<std::string>()));
        } catch (const json::exception& e) {
            throw ServiceError(400, "bad_request", e.what());
        } catch (const std::exception& e) {
            throw ServiceError(400, "invalid_volume", e.what());
        }
    }
    return add_volume(std::move(image), std::move(organ), std::move(tumor));
}

std::string slice_json(const SliceImage& s) {
    json overlays = json::object();
    for (const auto& [name, rle] : s.overlays) overlays[name] = rle.to_json();
    const std::string raw(s.pixels.begin(), s.pixels.end());
    return json{{"axis", std::string(1, "zyx"[s.axis])},
                {"index", s.index},
                {"shape", {s.rows, s.cols}},
                {"encoding", "base64-u8"},
                {"pixels", httplib::detail::base64_encode(raw)},
                {"overlays", overlays}}
        .dump();
}

std::string slice_pgm(const SliceImage& s) {
    std::string out = "P5\n" + std::to_string(s.cols) + " " + std::to_string(s.rows) + "\n255\n";
    out.append(s.pixels.begin(), s.pixels.end());
    return out;
}

void SegmentationService::mount(httplib::Server& server) {
    auto guarded = [](auto&& fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const ServiceError& e) {
                res.status = e.status();
                res.set_content(error_body(e.code(), e.what()).dump(), "application/json");
            } catch (const InvalidArgument& e) {
                res.status = 400;
                res.set_content(error_body("bad_request", e.what()).dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 500;
                res.set_content(error_body("internal", e.what()).dump(), "application/json");
            }
        };
    };

    server.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
                   res.set_content(health().dump(), "application/json");
               }));

    server.Post("/volumes", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    std::map<std::string, std::string> files;
                    for (const auto& [name, f] : req.files) files[name] = f.content;
                    const std::string id = upload(req.body, req.get_header_value("Content-Type"), files);
                    res.status = 201;
                    res.set_content(volume_info(id).dump(), "application/json");
                }));

    server.Get(R"(/volumes/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   res.set_content(volume_info(req.matches[1]).dump(), "application/json");
               }));

    server.Get(R"(/volumes/([^/]+)/slice)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   if (!req.has_param("index")) throw ServiceError(400, "bad_request", "missing index");
                   const int axis = parse_axis(req.has_param("axis") ? req.get_param_value("axis") : "z");
                   const int index = parse_int(req.get_param_value("index"), "index");
                   const std::string channel = req.has_param("channel") ? req.get_param_value("channel") : "image";
                   const SliceImage s = slice(req.matches[1], axis, index, channel);
                   if (req.has_param("format") && req.get_param_value("format") == "pgm") {
                       res.set_content(slice_pgm(s), "image/x-portable-graymap");
                   } else {
                       res.set_content(slice_json(s), "application/json");
                   }
               }));

    server.Post(R"(/volumes/([^/]+)/segment)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    json body;
                    try {
                        body = json::parse(req.body);
                    } catch (const json::exception& e) {
                        throw ServiceError(400, "bad_request", std::string("invalid JSON: ") + e.what());
                    }
                    res.set_content(segment(req.matches[1], parse_points(body)).dump(), "application/json");
                }));
}

void serve(SegmentationService& service, const std::string& host, int port) {
    httplib::Server server;
    service.mount(server);
    if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace tags
