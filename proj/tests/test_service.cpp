#include <gtest/gtest.h>

#include <thread>

#include "support.hpp"
#include "voxfeat/evaluation.hpp"
#include "voxfeat/service.hpp"

using namespace voxfeat;
using namespace voxfeat::testing;
using nlohmann::json;

namespace {

const char* kSmallModel = R"({"levels": 2, "featuresPerLevel": 2, "log2TableSize": 8})";

class Served : public ::testing::Test {
 protected:
  void SetUp() override {
    ServiceConfig sc;
    sc.cacheDir = tmp_.path() / "cache";
    sc.forest.trees = 10;
    svc_ = std::make_unique<Service>(sc);
    port_ = svc_->bind_any();
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { svc_->listen_after_bind(); });
    svc_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(300, 0);
  }
  void TearDown() override {
    svc_->stop();
    thread_.join();
    svc_.reset();
  }

  json post(const std::string& path, const json& body, int wantStatus) {
    auto r = client_->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, wantStatus) << path << ": " << r->body;
    return r->body.empty() || r->get_header_value("Content-Type") != "application/json" ? json{} : json::parse(r->body);
  }
  json put(const std::string& path, const json& body, int wantStatus) {
    auto r = client_->Put(path, body.dump(), "application/json");
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, wantStatus) << path << ": " << r->body;
    return json::parse(r->body);
  }
  json get(const std::string& path, int wantStatus) {
    auto r = client_->Get(path);
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, wantStatus) << path << ": " << r->body;
    return json::parse(r->body);
  }
  std::string get_bytes(const std::string& path) {
    auto r = client_->Get(path);
    EXPECT_TRUE(r && r->status == 200) << (r ? r->body : "no response");
    return r ? r->body : "";
  }

  static json train_doc(int epochs) {
    return {{"model", json::parse(kSmallModel)}, {"train", {{"epochs", epochs}, {"batchSize", 256}, {"learningRate", 1e-3}}}};
  }

  // phantom volume trained to completion
  std::string trained_phantom(const Phantom& ph) {
    const Dims d = ph.volume.dims();
    const json v = post("/volumes", {{"phantom", {{"kind", "nested-spheres"}, {"dims", {d.nx, d.ny, d.nz}}}}}, 201);
    const std::string id = v["id"];
    const json job = post("/volumes/" + id + "/train", train_doc(2), 202);
    const JobTicket t = svc_->wait_job(job["id"]);
    EXPECT_EQ(t.state, JobState::Done) << t.error;
    return id;
  }

  static Phantom phantom16() {
    PhantomParams pp;
    pp.dims = {16, 16, 16};
    return generate_phantom(pp);
  }

  TempDir tmp_;
  std::unique_ptr<Service> svc_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST_F(Served, RegistersPhantomAndReportsUnknownIds) {
  const json v = post("/volumes", {{"phantom", {{"kind", "engraved-cube"}, {"dims", {30, 28, 24}}}}}, 201);
  EXPECT_EQ(v["dims"], json({30, 28, 24}));
  EXPECT_EQ(v["state"], "idle");
  EXPECT_EQ(get("/volumes/" + v["id"].get<std::string>(), 200)["id"], v["id"]);
  EXPECT_EQ(get("/volumes/nope", 404)["field"], "id");
  EXPECT_EQ(get("/jobs/nope", 404)["field"], "jid");
  EXPECT_EQ(post("/volumes", json{{"phantom", {{"kind", "blob"}}}}, 422)["kind"], "invalid-argument");
  EXPECT_EQ(post("/volumes", json{{"path", (tmp_ / "missing.raw").string()}}, 422)["field"], "path");
  EXPECT_EQ(post("/volumes", json::object(), 422)["field"], "body");
}

TEST_F(Served, RawUploadUsesQueryMetadata) {
  std::string payload(64, '\0');
  for (int i = 0; i < 64; ++i) payload[static_cast<std::size_t>(i)] = static_cast<char>(i * 4);
  auto r = client_->Post("/volumes?dims=4,4,4&dtype=uint8", payload, "application/octet-stream");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201) << r->body;
  EXPECT_EQ(json::parse(r->body)["dims"], json({4, 4, 4}));
  r = client_->Post("/volumes?dims=4,4,5&dtype=uint8", payload, "application/octet-stream");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 422);
  r = client_->Post("/volumes?dims=4,4", payload, "application/octet-stream");
  ASSERT_TRUE(r);
  EXPECT_EQ(json::parse(r->body)["field"], "dims");
}

TEST_F(Served, ClassifyBeforeTrainingIsAConflict) {
  const json v = post("/volumes", {{"phantom", {{"dims", {16, 16, 16}}}}}, 201);
  const std::string id = v["id"];
  EXPECT_EQ(post("/volumes/" + id + "/classify", json::object(), 409)["state"], "idle");
  EXPECT_EQ(post("/volumes/" + id + "/viewpoints", json::object(), 409)["state"], "idle");
  EXPECT_EQ(post("/volumes/" + id + "/render", json::object(), 409)["kind"], "conflict");
}

TEST_F(Served, SecondTrainWhileRunningIsAConflict) {
  const json v = post("/volumes", {{"phantom", {{"dims", {16, 16, 16}}}}}, 201);
  const std::string id = v["id"];
  const json job = post("/volumes/" + id + "/train", train_doc(400), 202);
  EXPECT_EQ(job["state"], "running");
  EXPECT_EQ(post("/volumes/" + id + "/train", train_doc(400), 409)["field"], "state");
  EXPECT_EQ(post("/volumes/" + id + "/classify", json::object(), 409)["state"], "running");
  const json status = get("/jobs/" + job["id"].get<std::string>(), 200);
  EXPECT_GE(status["progress"].get<double>(), 0.0);
  EXPECT_LE(status["progress"].get<double>(), 1.0);
  // teardown cancels the job
}

TEST_F(Served, JobProgressAndCacheHit) {
  const Phantom ph = phantom16();
  const std::string id = trained_phantom(ph);
  const json s = get("/volumes/" + id, 200);
  EXPECT_EQ(s["state"], "done");
  const json job = get("/jobs/" + s["job"].get<std::string>(), 200);
  EXPECT_EQ(job["progress"], 1.0);
  EXPECT_EQ(job["epochs"], 2);
  EXPECT_FALSE(job["cacheHit"].get<bool>());
  // the same volume and configs again come from the cache
  const json again = post("/volumes/" + id + "/train", train_doc(2), 202);
  const JobTicket t = svc_->wait_job(again["id"]);
  EXPECT_TRUE(t.cacheHit);
  EXPECT_TRUE(t.losses.empty());
}

TEST_F(Served, ScribblesValidateAndOverlayMatchesLibrary) {
  const json v = post("/volumes", {{"phantom", {{"dims", {16, 16, 16}}}}}, 201);
  const std::string id = v["id"];
  const json bad = put("/volumes/" + id + "/scribbles", json::array({json{{"voxel", {0, 0, 99}}, {"class", 1}}}), 422);
  EXPECT_EQ(bad["field"], "scribbles[0].voxel");

  ScribbleSet s({16, 16, 16});
  s.add(Index3{2, 3, 8}, 1);
  s.add(Index3{10, 12, 8}, 2);
  s.add(Index3{5, 5, 4}, 3);  // another slice
  const json ok = put("/volumes/" + id + "/scribbles", scribbles_to_json(s), 200);
  EXPECT_EQ(ok["accepted"], 3);
  EXPECT_EQ(ok["tallies"]["2"], 1);
  EXPECT_EQ(scribbles_from_json(get("/volumes/" + id + "/scribbles", 200), {16, 16, 16}), s);

  const std::string png = get_bytes("/volumes/" + id + "/slice?axis=2&index=8&overlay=scribbles");
  const Image img = decode_png({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()});
  SliceOptions opt;
  opt.overlay = Overlay::Scribbles;
  opt.scribbles = &s;
  const Image want = render_slice(phantom16().volume, 2, 8, opt);
  EXPECT_EQ(img.rgba, want.rgba);
  const Image plain = render_slice(phantom16().volume, 2, 8);
  int differing = 0;
  for (std::size_t i = 0; i < img.rgba.size(); i += 4)
    if (!std::equal(img.rgba.begin() + static_cast<std::ptrdiff_t>(i), img.rgba.begin() + static_cast<std::ptrdiff_t>(i + 4),
                    plain.rgba.begin() + static_cast<std::ptrdiff_t>(i)))
      ++differing;
  EXPECT_EQ(differing, 2);

  EXPECT_EQ(get("/volumes/" + id + "/slice?axis=2&index=16", 422)["field"], "index");
  EXPECT_EQ(get("/volumes/" + id + "/slice?axis=2", 422)["field"], "index");
  EXPECT_EQ(get("/volumes/" + id + "/slice?axis=2&index=x", 422)["field"], "index");
  EXPECT_EQ(get("/volumes/" + id + "/slice?index=1&overlay=probability", 409)["field"], "overlay");
}

TEST_F(Served, TransferFunctionsRoundTrip) {
  const json v = post("/volumes", {{"phantom", {{"dims", {16, 16, 16}}}}}, 201);
  const std::string id = v["id"];
  const json doc = tf_to_json(default_tfs(3, 0.4, 0.3));
  EXPECT_EQ(put("/volumes/" + id + "/tf", doc, 200)["classes"], 3);
  EXPECT_EQ(get("/volumes/" + id + "/tf", 200), doc);
  EXPECT_EQ(put("/volumes/" + id + "/tf", json{{"classes", json::array()}}, 422)["field"], "classes");
}

TEST_F(Served, RenderMatchesTheLibraryBitForBit) {
  const Phantom ph = phantom16();
  const std::string id = trained_phantom(ph);
  const ScribbleSet s = simulate_scribbles(ph.labels, ScribbleLevel::S4, 0);
  put("/volumes/" + id + "/scribbles", scribbles_to_json(s), 200);
  const json c = post("/volumes/" + id + "/classify", json::object(), 200);
  EXPECT_EQ(c["classes"], 4);

  const json cam{{"dir", {1.0, 0.5, 0.25}}, {"width", 48}, {"height", 40}};
  auto r = client_->Post("/volumes/" + id + "/render", json{{"camera", cam}, {"mode", "probabilityIntensity"}}.dump(),
                         "application/json");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");

  // same pipeline through the library
  ModelConfig mc = model_config_from_json(json::parse(kSmallModel));
  TrainConfig tc = train_config_from_json(train_doc(2)["train"]);
  const auto entry = FeatureCache(tmp_.path() / "cache").lookup(cache_key(volume_digest(ph.volume), mc, tc));
  ASSERT_TRUE(entry.has_value());
  ForestConfig fc;
  fc.trees = 10;
  const ProbabilityVolume pv = predict_proba(fit(entry->features, s, fc), entry->features);
  RenderConfig rc;
  rc.mode = RenderMode::ProbabilityIntensity;
  const auto want = encode_png(render(ph.volume, pv, default_tfs(3), camera_from_json(cam, ph.volume.dims()), rc));
  EXPECT_EQ(r->body, std::string(want.begin(), want.end()));

  const json badCam{{"camera", {{"dir", {1, 1}}}}};
  EXPECT_EQ(post("/volumes/" + id + "/render", badCam, 422)["field"], "camera.dir");
  EXPECT_EQ(post("/volumes/" + id + "/render", json{{"mode", "xray"}}, 422)["kind"], "invalid-argument");
}

TEST_F(Served, ViewpointsWithThumbnails) {
  const Phantom ph = phantom16();
  const std::string id = trained_phantom(ph);
  const json r = post("/volumes/" + id + "/viewpoints",
                      {{"K", 6}, {"M", 60}, {"thumbnailSize", 16}, {"stop", {{"maxViews", 3}}}}, 200);
  ASSERT_TRUE(r.contains("selected"));
  EXPECT_LE(r["selected"].size(), 3u);
  ASSERT_EQ(r["thumbnails"].size(), r["selected"].size());
  for (const auto& t : r["thumbnails"]) EXPECT_EQ(t["png"].get<std::string>().substr(0, 4), "iVBO");  // PNG magic
  EXPECT_EQ(post("/volumes/" + id + "/viewpoints", json{{"K", 0}}, 422)["field"], "K");
  EXPECT_EQ(post("/volumes/" + id + "/viewpoints", json{{"stop", {{"maxViews", 0}}}}, 422)["field"], "stop.maxViews");
}

TEST(Base64, MatchesKnownVectors) {
  auto b = [](std::string s) { return base64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}); };
  EXPECT_EQ(b(""), "");
  EXPECT_EQ(b("f"), "Zg==");
  EXPECT_EQ(b("fo"), "Zm8=");
  EXPECT_EQ(b("foobar"), "Zm9vYmFy");
}

TEST(HttpStatus, ErrorFamilies) {
  EXPECT_EQ(http_status(ErrorKind::NotFound), 404);
  EXPECT_EQ(http_status(ErrorKind::Conflict), 409);
  EXPECT_EQ(http_status(ErrorKind::StaleFeatures), 409);
  EXPECT_EQ(http_status(ErrorKind::InvalidArgument), 422);
  EXPECT_EQ(http_status(ErrorKind::Format), 422);
}
