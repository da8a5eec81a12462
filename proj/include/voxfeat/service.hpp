#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "voxfeat/classify.hpp"
#include "voxfeat/phantom.hpp"
#include "voxfeat/pipeline.hpp"
#include "voxfeat/render.hpp"
#include "voxfeat/viewpoints.hpp"

// after Eigen: httplib pulls in <resolv.h>, whose `_res` macro clashes with
// Eigen's parameter names
#include <httplib.h>

namespace voxfeat {

using json = nlohmann::json;

inline int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict:
    case ErrorKind::MissingFeatures:
    case ErrorKind::StaleFeatures: return 409;
    default: return 422;
  }
}

inline std::string base64(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

namespace detail {

inline Vec3 vec3_at(const json& j, const std::string& key, const std::string& path) {
  require(j.contains(key) && j[key].is_array() && j[key].size() == 3 &&
              std::all_of(j[key].begin(), j[key].end(), [](const json& v) { return v.is_number(); }),
          ErrorKind::InvalidArgument, path + "." + key + " must be three numbers", path + "." + key);
  return {j[key][0].get<double>(), j[key][1].get<double>(), j[key][2].get<double>()};
}

template <class T>
T number_or(const json& j, const char* key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if constexpr (std::is_integral_v<T>)
    require(j[key].is_number_integer(), ErrorKind::InvalidArgument, path + key + " must be an integer", path + key);
  else
    require(j[key].is_number(), ErrorKind::InvalidArgument, path + key + " must be a number", path + key);
  return j[key].get<T>();
}

}  // namespace detail

/// Camera document: either {eye, target, up?, fovY?, width?, height?} or
/// {dir, radiusFactor?, width?, height?} for an orbit around the volume.
inline Camera camera_from_json(const json& j, Dims dims) {
  require(j.is_object(), ErrorKind::InvalidArgument, "camera must be an object", "camera");
  const int w = detail::number_or(j, "width", 256, "camera."), h = detail::number_or(j, "height", 256, "camera.");
  require(w >= 1 && w <= 4096, ErrorKind::InvalidArgument, "camera.width must be in [1,4096]", "camera.width");
  require(h >= 1 && h <= 4096, ErrorKind::InvalidArgument, "camera.height must be in [1,4096]", "camera.height");
  Camera c;
  if (j.contains("dir")) {
    c = orbit_camera(dims, detail::vec3_at(j, "dir", "camera"), detail::number_or(j, "radiusFactor", 1.5, "camera."),
                     w, h);
  } else {
    c.eye = detail::vec3_at(j, "eye", "camera");
    c.target = j.contains("target") ? detail::vec3_at(j, "target", "camera") : volume_center(dims);
    if (j.contains("up")) c.up = detail::vec3_at(j, "up", "camera");
    c.fovY = detail::number_or(j, "fovY", 40.0, "camera.");
    c.width = w;
    c.height = h;
  }
  c.validate();
  return c;
}

enum class JobState { Idle, Running, Done, Failed };

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::Idle: return "idle";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "?";
}

struct JobTicket {
  std::string id;
  std::string kind = "train";
  std::string volumeId;
  JobState state = JobState::Running;
  double progress = 0;  // monotone in [0,1]
  std::vector<double> losses;  // per-epoch total loss
  std::string error;
  bool cacheHit = false;
  std::chrono::system_clock::time_point created, updated;

  json to_json(std::size_t recent = 20) const {
    auto ms = [](std::chrono::system_clock::time_point t) {
      return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
    };
    json l = json::array();
    for (std::size_t i = losses.size() > recent ? losses.size() - recent : 0; i < losses.size(); ++i)
      l.push_back({{"epoch", i + 1}, {"loss", losses[i]}});
    json j{{"id", id},         {"kind", kind},          {"volume", volumeId},     {"state", to_string(state)},
           {"progress", progress}, {"epochs", losses.size()}, {"recentLosses", l}, {"cacheHit", cacheHit},
           {"created", ms(created)}, {"updated", ms(updated)}};
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

/// Per-volume state. Mutations hold `mu` exclusively, reads share it.
struct Session {
  std::string id;
  std::shared_ptr<const ScalarVolume> volume;
  std::shared_ptr<const LabelVolume> labels;  // phantoms only
  std::string volumeDigest;
  JobState state = JobState::Idle;
  std::string failure;
  std::string jobId;
  ModelConfig model;
  TrainConfig train;
  std::shared_ptr<const FeatureVolume> features;
  std::shared_ptr<const DerivedFields> fields;
  ScribbleSet scribbles;
  std::shared_ptr<const RandomForest> forest;
  std::shared_ptr<const ProbabilityVolume> probabilities;
  TfSet tfs;
  RenderConfig render;
  mutable std::shared_mutex mu;
};

struct ServiceConfig {
  fs::path cacheDir;  // empty: no feature cache
  ModelConfig model;
  TrainConfig train;
  ForestConfig forest;
};

/// HTTP front end over the library; one Session per registered volume.
class Service {
 public:
  explicit Service(ServiceConfig cfg = {}) : cfg_(std::move(cfg)) { routes(); }
  ~Service() {
    stop();
    std::lock_guard lk(mu_);
    workers_.clear();  // jthread requests stop and joins
  }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  httplib::Server& server() { return http_; }
  int bind_any(const std::string& host = "127.0.0.1") { return http_.bind_to_any_port(host); }
  bool listen(const std::string& host, int port) { return http_.listen(host, port); }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  void stop() { http_.stop(); }
  void wait_until_ready() { http_.wait_until_ready(); }

  /// Blocks until the given job leaves the running state.
  JobTicket wait_job(const std::string& jid) {
    for (;;) {
      {
        auto j = job(jid);
        std::lock_guard lk(jobMu_);
        if (j->state != JobState::Running) return *j;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

 private:
  ServiceConfig cfg_;
  httplib::Server http_;
  std::mutex mu_;  // sessions_, jobs_, workers_, counters
  std::mutex jobMu_;  // JobTicket contents
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<JobTicket>> jobs_;
  std::vector<std::jthread> workers_;
  int nextVolume_ = 1, nextJob_ = 1;

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard lk(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorKind::NotFound, "unknown volume id '" + id + "'", "id");
    return it->second;
  }
  std::shared_ptr<JobTicket> job(const std::string& id) {
    std::lock_guard lk(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) fail(ErrorKind::NotFound, "unknown job id '" + id + "'", "jid");
    return it->second;
  }

  static void send_json(httplib::Response& res, int status, const json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }
  static void send_png(httplib::Response& res, const Image& img) {
    const auto png = encode_png(img);
    res.status = 200;
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  }

  template <class F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      json j{{"error", e.what()}, {"kind", to_string(e.kind())}};
      if (!e.field().empty()) j["field"] = e.field();
      send_json(res, http_status(e.kind()), j);
    } catch (const json::exception& e) {
      send_json(res, 422, {{"error", std::string("malformed document: ") + e.what()}, {"field", "body"}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  }

  static json body_json(const httplib::Request& req, bool allowEmpty = true) {
    if (req.body.empty()) {
      require(allowEmpty, ErrorKind::InvalidArgument, "request body is required", "body");
      return json::object();
    }
    return json::parse(req.body);
  }

  static std::int64_t int_param(const httplib::Request& req, const char* name, std::optional<std::int64_t> fallback) {
    if (!req.has_param(name)) {
      require(fallback.has_value(), ErrorKind::InvalidArgument, std::string("query parameter '") + name + "' is required",
              name);
      return *fallback;
    }
    const std::string v = req.get_param_value(name);
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::InvalidArgument,
            std::string("query parameter '") + name + "' must be an integer", name);
    return out;
  }

  json session_json(const Session& s) const {
    const Dims d = s.volume->dims();
    json j{{"id", s.id},
           {"dims", {d.nx, d.ny, d.nz}},
           {"state", to_string(s.state)},
           {"scribbles", s.scribbles.size()},
           {"classified", s.probabilities != nullptr}};
    if (!s.jobId.empty()) j["job"] = s.jobId;
    if (!s.failure.empty()) j["failure"] = s.failure;
    if (s.labels) j["numClasses"] = s.labels->max_label();
    return j;
  }

  std::shared_ptr<Session> add_session(ScalarVolume vol, std::optional<LabelVolume> labels) {
    auto s = std::make_shared<Session>();
    s->volumeDigest = volume_digest(vol);
    s->volume = std::make_shared<const ScalarVolume>(std::move(vol));
    if (labels) s->labels = std::make_shared<const LabelVolume>(std::move(*labels));
    s->scribbles = ScribbleSet(s->volume->dims());
    s->model = cfg_.model;
    s->train = cfg_.train;
    std::lock_guard lk(mu_);
    s->id = "v" + std::to_string(nextVolume_++);
    sessions_[s->id] = s;
    return s;
  }

  void routes() {
    http_.Post("/volumes", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { register_volume(req, res); });
    });
    http_.Get(R"(/volumes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1]);
        std::shared_lock lk(s->mu);
        send_json(res, 200, session_json(*s));
      });
    });
    http_.Post(R"(/volumes/([^/]+)/train)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { start_training(req, res); });
    });
    http_.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto j = job(req.matches[1]);
        std::lock_guard lk(jobMu_);
        send_json(res, 200, j->to_json());
      });
    });
    http_.Put(R"(/volumes/([^/]+)/scribbles)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1]);
        const json doc = body_json(req, false);
        ScribbleSet parsed = scribbles_from_json(doc, s->volume->dims());
        std::unique_lock lk(s->mu);
        s->scribbles = std::move(parsed);
        json tallies = json::object();
        for (const auto& [c, n] : s->scribbles.class_tallies()) tallies[std::to_string(c)] = n;
        send_json(res, 200,
                  {{"accepted", s->scribbles.size()}, {"tallies", tallies}, {"conflicts", s->scribbles.conflicts()}});
      });
    });
    http_.Get(R"(/volumes/([^/]+)/scribbles)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1]);
        std::shared_lock lk(s->mu);
        send_json(res, 200, {{"scribbles", scribbles_to_json(s->scribbles)}});
      });
    });
    http_.Post(R"(/volumes/([^/]+)/classify)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { classify(req, res); });
    });
    http_.Get(R"(/volumes/([^/]+)/slice)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { slice(req, res); });
    });
    http_.Put(R"(/volumes/([^/]+)/tf)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1]);
        TfSet tfs = tf_from_json(body_json(req, false));
        std::unique_lock lk(s->mu);
        s->tfs = std::move(tfs);
        send_json(res, 200, {{"ok", true}, {"classes", s->tfs.size()}});
      });
    });
    http_.Get(R"(/volumes/([^/]+)/tf)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1]);
        std::shared_lock lk(s->mu);
        send_json(res, 200, tf_to_json(s->tfs));
      });
    });
    http_.Post(R"(/volumes/([^/]+)/render)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { render_view(req, res); });
    });
    http_.Post(R"(/volumes/([^/]+)/viewpoints)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { viewpoints(req, res); });
    });
  }

  void register_volume(const httplib::Request& req, httplib::Response& res) {
    const std::string type = req.get_header_value("Content-Type");
    std::shared_ptr<Session> s;
    if (type.starts_with("application/octet-stream")) {
      // raw upload; metadata in the query string
      VolumeMetadata meta;
      const auto dims = req.get_param_value("dims");
      std::int64_t d[3] = {0, 0, 0};
      require(std::sscanf(dims.c_str(), "%ld,%ld,%ld", &d[0], &d[1], &d[2]) == 3, ErrorKind::InvalidArgument,
              "dims query parameter must be nx,ny,nz", "dims");
      meta.dims = {d[0], d[1], d[2]};
      meta.dtype = req.has_param("dtype") ? req.get_param_value("dtype") : "uint8";
      if (req.has_param("endianness")) meta.endianness = req.get_param_value("endianness");
      require(meta.endianness == "little" || meta.endianness == "big", ErrorKind::InvalidArgument,
              "endianness must be little or big", "endianness");
      require(meta.dtype == "uint8" || meta.dtype == "uint16" || meta.dtype == "float32", ErrorKind::InvalidArgument,
              "dtype must be uint8, uint16 or float32", "dtype");
      s = add_session(decode_volume(meta, {req.body.data(), req.body.size()}), std::nullopt);
    } else {
      const json doc = body_json(req, false);
      require(doc.is_object(), ErrorKind::InvalidArgument, "body must be an object", "body");
      if (doc.contains("path")) {
        require(doc["path"].is_string(), ErrorKind::InvalidArgument, "path must be a string", "path");
        const fs::path p = doc["path"].get<std::string>();
        ScalarVolume vol;
        try {
          vol = load_volume(p);
        } catch (const Error& e) {
          fail(e.kind() == ErrorKind::Io ? ErrorKind::InvalidArgument : e.kind(), e.what(), "path");
        }
        std::optional<LabelVolume> labels;
        if (doc.contains("labels")) {
          require(doc["labels"].is_string(), ErrorKind::InvalidArgument, "labels must be a string", "labels");
          labels = load_labels(doc["labels"].get<std::string>());
          require(labels->dims() == vol.dims(), ErrorKind::InvalidArgument, "labels dims differ from volume",
                  "labels");
        }
        s = add_session(std::move(vol), std::move(labels));
      } else if (doc.contains("phantom")) {
        const json& p = doc["phantom"];
        require(p.is_object(), ErrorKind::InvalidArgument, "phantom must be an object", "phantom");
        PhantomParams pp;
        if (p.contains("kind")) {
          require(p["kind"].is_string(), ErrorKind::InvalidArgument, "phantom.kind must be a string", "phantom.kind");
          pp.kind = parse_phantom_kind(p["kind"].get<std::string>());
        }
        if (p.contains("dims")) {
          const Vec3 d = detail::vec3_at(p, "dims", "phantom");
          pp.dims = {std::int64_t(d.x), std::int64_t(d.y), std::int64_t(d.z)};
        }
        pp.seed = detail::number_or<std::uint64_t>(p, "seed", 0, "phantom.");
        pp.noise = detail::number_or(p, "noise", pp.noise, "phantom.");
        Phantom ph = generate_phantom(pp);
        s = add_session(std::move(ph.volume), std::move(ph.labels));
      } else {
        fail(ErrorKind::InvalidArgument, "body needs 'path' or 'phantom'", "body");
      }
    }
    std::shared_lock lk(s->mu);
    send_json(res, 201, session_json(*s));
  }

  void start_training(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1]);
    const json doc = body_json(req);
    require(doc.is_object(), ErrorKind::InvalidArgument, "body must be an object", "body");
    ModelConfig mc;
    TrainConfig tc;
    {
      std::shared_lock lk(s->mu);
      mc = doc.contains("model") ? model_config_from_json(doc["model"]) : s->model;
      tc = doc.contains("train") ? train_config_from_json(doc["train"]) : s->train;
    }
    auto ticket = std::make_shared<JobTicket>();
    {
      std::unique_lock lk(s->mu);
      if (s->state == JobState::Running)
        throw Error(ErrorKind::Conflict, "training already running for " + s->id, "state");
      {
        std::lock_guard g(mu_);
        ticket->id = "j" + std::to_string(nextJob_++);
        jobs_[ticket->id] = ticket;
      }
      ticket->volumeId = s->id;
      ticket->created = ticket->updated = std::chrono::system_clock::now();
      s->state = JobState::Running;
      s->failure.clear();
      s->jobId = ticket->id;
      s->model = mc;
      s->train = tc;
      // new features invalidate everything derived from the old ones
      s->features.reset();
      s->forest.reset();
      s->probabilities.reset();
    }
    {
      std::lock_guard g(mu_);
      workers_.emplace_back([this, s, ticket, mc, tc](std::stop_token stop) { run_training(s, ticket, mc, tc, stop); });
    }
    std::lock_guard g(jobMu_);
    send_json(res, 202, ticket->to_json());
  }

  void run_training(std::shared_ptr<Session> s, std::shared_ptr<JobTicket> t, ModelConfig mc, TrainConfig tc,
                    std::stop_token stop) {
    auto onEpoch = [&](const EpochReport& r) {
      std::lock_guard g(jobMu_);
      t->losses.push_back(r.meanLoss.total);
      t->progress = std::max(t->progress, double(r.epoch) / double(r.epochs));
      t->updated = std::chrono::system_clock::now();
      return !stop.stop_requested();
    };
    try {
      std::shared_ptr<const FeatureVolume> fv;
      bool hit = false;
      if (!cfg_.cacheDir.empty()) {
        FeatureCache cache(cfg_.cacheDir);
        auto r = cache.get_or_train(*s->volume, mc, tc, onEpoch);
        hit = r.hit;
        fv = std::make_shared<const FeatureVolume>(std::move(r.entry.features));
      } else {
        const DerivedFields fields = compute_derived_fields(*s->volume, mc.patchSide);
        TrainResult tr = train(*s->volume, fields, mc, tc, onEpoch);
        require(!tr.cancelled, ErrorKind::Precondition, "training was cancelled");
        fv = std::make_shared<const FeatureVolume>(
            extract_features(tr.model, *s->volume, cache_key(s->volumeDigest, mc, tc)));
      }
      {
        std::unique_lock lk(s->mu);
        s->features = std::move(fv);
        s->state = JobState::Done;
      }
      std::lock_guard g(jobMu_);
      t->cacheHit = hit;
      t->progress = 1.0;
      t->state = JobState::Done;
      t->updated = std::chrono::system_clock::now();
    } catch (const std::exception& e) {
      {
        std::unique_lock lk(s->mu);
        s->state = JobState::Failed;
        s->failure = e.what();
      }
      std::lock_guard g(jobMu_);
      t->state = JobState::Failed;
      t->error = e.what();
      t->updated = std::chrono::system_clock::now();
    }
  }

  void classify(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1]);
    const json doc = body_json(req);
    require(doc.is_object(), ErrorKind::InvalidArgument, "body must be an object", "body");
    ForestConfig fc = doc.contains("forest") ? forest_config_from_json(doc["forest"]) : cfg_.forest;
    std::unique_lock lk(s->mu);
    if (s->state != JobState::Done || !s->features) {
      send_json(res, 409,
                {{"error", "classification requires finished training"}, {"kind", "conflict"},
                 {"state", to_string(s->state)}});
      return;
    }
    auto forest = std::make_shared<const RandomForest>(fit(*s->features, s->scribbles, fc));
    auto probs = std::make_shared<const ProbabilityVolume>(predict_proba(*forest, *s->features));
    json acc = json::object();
    for (const auto& [c, a] : scribble_accuracy(s->scribbles, *probs)) acc[std::to_string(c)] = a;
    s->forest = std::move(forest);
    s->probabilities = std::move(probs);
    if (static_cast<int>(s->tfs.size()) != s->probabilities->foreground_classes())
      s->tfs = default_tfs(s->probabilities->foreground_classes());
    send_json(res, 200, {{"classes", s->probabilities->numClasses}, {"accuracy", acc}, {"scribbles", s->scribbles.size()}});
  }

  void slice(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1]);
    const int axis = static_cast<int>(int_param(req, "axis", 2));
    const std::int64_t index = int_param(req, "index", std::nullopt);
    SliceOptions opt;
    opt.overlay = parse_overlay(req.has_param("overlay") ? req.get_param_value("overlay") : "none");
    opt.scale = static_cast<int>(int_param(req, "scale", 1));
    if (req.has_param("alpha")) {
      const std::string a = req.get_param_value("alpha");
      char* end = nullptr;
      opt.alpha = std::strtod(a.c_str(), &end);
      require(end && *end == '\0', ErrorKind::InvalidArgument, "alpha must be a number", "alpha");
    }
    std::shared_lock lk(s->mu);
    opt.scribbles = &s->scribbles;
    opt.probabilities = s->probabilities.get();
    opt.labels = s->labels.get();
    if (opt.overlay == Overlay::Probability && !opt.probabilities)
      throw Error(ErrorKind::Conflict, "no probability volume yet; classify first", "overlay");
    if (opt.overlay == Overlay::Label && !opt.labels)
      throw Error(ErrorKind::InvalidArgument, "this volume has no label volume", "overlay");
    send_png(res, render_slice(*s->volume, axis, index, opt));
  }

  void render_view(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1]);
    const json doc = body_json(req);
    require(doc.is_object(), ErrorKind::InvalidArgument, "body must be an object", "body");
    std::shared_lock lk(s->mu);
    if (!s->probabilities) throw Error(ErrorKind::Conflict, "no probability volume yet; classify first", "state");
    const Camera cam = camera_from_json(doc.value("camera", json{{"dir", {1.0, 1.0, 1.0}}}), s->volume->dims());
    RenderConfig rc = s->render;
    if (doc.contains("mode")) {
      require(doc["mode"].is_string(), ErrorKind::InvalidArgument, "mode must be a string", "mode");
      rc.mode = parse_render_mode(doc["mode"].get<std::string>());
    }
    rc.stepSize = detail::number_or(doc, "stepSize", rc.stepSize, "");
    if (doc.contains("background")) {
      const auto& b = doc["background"];
      require(b.is_array() && b.size() == 4, ErrorKind::InvalidArgument, "background must be [r,g,b,a]", "background");
      for (int k = 0; k < 4; ++k) rc.background[static_cast<std::size_t>(k)] = b[static_cast<std::size_t>(k)].get<double>();
    }
    send_png(res, render(*s->volume, *s->probabilities, s->tfs, cam, rc));
  }

  void viewpoints(const httplib::Request& req, httplib::Response& res) {
    auto s = session(req.matches[1]);
    const json doc = body_json(req);
    require(doc.is_object(), ErrorKind::InvalidArgument, "body must be an object", "body");
    ViewpointOptions opt;
    opt.kmeans.k = detail::number_or(doc, "K", opt.kmeans.k, "");
    opt.candidates = detail::number_or(doc, "M", opt.candidates, "");
    opt.kmeans.seed = detail::number_or<std::uint64_t>(doc, "seed", 0, "");
    require(opt.kmeans.k >= 1, ErrorKind::InvalidArgument, "K must be >= 1", "K");
    require(opt.candidates >= 1 && opt.candidates <= 100000, ErrorKind::InvalidArgument, "M must be in [1,100000]", "M");
    if (doc.contains("stop")) {
      const json& st = doc["stop"];
      require(st.is_object(), ErrorKind::InvalidArgument, "stop must be an object", "stop");
      opt.greedy.coverageTarget = detail::number_or(st, "coverage", opt.greedy.coverageTarget, "stop.");
      opt.greedy.maxViews = detail::number_or(st, "maxViews", opt.greedy.maxViews, "stop.");
      require(opt.greedy.maxViews >= 1, ErrorKind::InvalidArgument, "stop.maxViews must be >= 1", "stop.maxViews");
    }
    const bool thumbs = doc.value("thumbnails", true);
    const int thumbSize = detail::number_or(doc, "thumbnailSize", 128, "");
    require(thumbSize >= 8 && thumbSize <= 1024, ErrorKind::InvalidArgument, "thumbnailSize must be in [8,1024]",
            "thumbnailSize");

    std::shared_ptr<const FeatureVolume> fv;
    std::shared_ptr<const DerivedFields> fields;
    {
      std::unique_lock lk(s->mu);
      if (!s->features) {
        send_json(res, 409,
                  {{"error", "viewpoints require finished training"}, {"kind", "conflict"}, {"state", to_string(s->state)}});
        return;
      }
      if (!s->fields) s->fields = std::make_shared<const DerivedFields>(compute_derived_fields(*s->volume, s->model.patchSide));
      fv = s->features;
      fields = s->fields;
    }
    const ViewpointReport r = recommend_viewpoints(*fv, *fields, opt);
    json out = r.to_json(false);
    if (thumbs) {
      json t = json::array();
      for (const auto& st : r.selected) {
        const auto png = encode_png(viewpoint_thumbnail(*s->volume, r.views, st.index, thumbSize));
        t.push_back({{"index", st.index}, {"png", base64(png)}});
      }
      out["thumbnails"] = t;
    }
    send_json(res, 200, out);
  }
};

}  // namespace voxfeat
