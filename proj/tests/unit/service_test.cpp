#include <set>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "jina/service.hpp"
#include "support/fixtures.hpp"

namespace {

using jina::service::SessionService;

// Rates every item of the current session; the first `goldens_right` goldens
// get the expert score, the rest miss by two.
void finish_session(SessionService& svc, const std::string& subject, int goldens_right) {
  const auto session = svc.next(subject).body["session"];
  int seen = 0;
  for (auto next = svc.next(subject); next.status == 200 && next.body["session"] == session;
       next = svc.next(subject)) {
    const std::string img = next.body["image_id"];
    int n = 2;
    if (img[0] == 'g') n = seen++ < goldens_right ? 3 : 5;
    ASSERT_EQ(svc.rate(fixture::naturalness(subject, img, n)).status, 200);
    ASSERT_EQ(svc.rate(fixture::perspectives(subject, img, 3, 4)).status, 200);
  }
}

TEST(Queue, GoldensNeverRepeat) {
  std::vector<std::string> corpus, goldens;
  for (int i = 0; i < 30; ++i) corpus.push_back("c" + std::to_string(i));
  for (int i = 0; i < 9; ++i) goldens.push_back("g" + std::to_string(i));
  const auto q = jina::service::build_queue(corpus, goldens, {13, 15, 3}, 1);
  ASSERT_EQ(q.size(), 3u);
  std::set<std::string> used;
  for (const auto& s : q) {
    EXPECT_EQ(s.size(), 13u);
    for (const auto& item : s) {
      if (item.golden) EXPECT_TRUE(used.insert(item.image_id).second);
    }
  }
  EXPECT_THROW(jina::service::build_queue(corpus, goldens, {12, 15, 4}, 1), jina::Error);
}

TEST(Service, FreshSubject) {
  fixture::TempDir dir("svc");
  auto setup = fixture::make_study(dir.path(), 790, 30, 390, 10);
  SessionService svc(setup.config);
  const auto r = svc.next("alice");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["phase"], "NATURALNESS");
  EXPECT_EQ(r.body["progress"], "0/400");
  EXPECT_EQ(r.body["session"], 1);
  EXPECT_EQ(svc.next("mallory").status, 404);
}

TEST(Service, TwoPhaseContract) {
  fixture::TempDir dir("svc");
  SessionService svc(fixture::make_study(dir.path(), 4, 4, 2, 2).config);
  const std::string first = svc.next("alice").body["image_id"];
  EXPECT_EQ(svc.rate(fixture::perspectives("alice", first, 3, 3)).status, 409);
  EXPECT_EQ(svc.rate(fixture::naturalness("alice", first, 4)).status, 200);
  auto r = svc.next("alice");
  EXPECT_EQ(r.body["image_id"], first);
  EXPECT_EQ(r.body["phase"], "PERSPECTIVES");
  EXPECT_EQ(svc.rate(fixture::naturalness("alice", first, 4)).status, 409);
  EXPECT_EQ(svc.rate(fixture::perspectives("alice", first, 2, 5, "T3", "R1")).status, 200);
  r = svc.next("alice");
  EXPECT_NE(r.body["image_id"], first);
  EXPECT_EQ(r.body["phase"], "NATURALNESS");
  EXPECT_EQ(r.body["progress"], "1/4");

  const auto lines = fixture::read_text(dir / "ratings.jsonl");
  std::istringstream in(lines);
  const auto recs = jina::subjective::ingest_stream(in);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].naturalness, 4);
  EXPECT_EQ(recs[0].technical, 2);
  EXPECT_EQ(recs[0].rationality, 5);
  EXPECT_EQ(recs[0].t_factor, "T3");
  EXPECT_EQ(recs[0].r_factor, "R1");
}

TEST(Service, RejectsBadSubmissions) {
  fixture::TempDir dir("svc");
  SessionService svc(fixture::make_study(dir.path(), 4, 4, 2, 2).config);
  const std::string img = svc.next("alice").body["image_id"];
  EXPECT_EQ(svc.rate(fixture::naturalness("alice", "elsewhere", 4)).status, 409);
  EXPECT_EQ(svc.rate(fixture::naturalness("alice", img, 6)).status, 422);
  EXPECT_EQ(svc.rate({{"subject_id", "alice"}, {"image_id", img}}).status, 422);
  auto both = fixture::naturalness("alice", img, 3);
  both["technical"] = 3;
  EXPECT_EQ(svc.rate(both).status, 422);
  ASSERT_EQ(svc.rate(fixture::naturalness("alice", img, 3)).status, 200);
  EXPECT_EQ(svc.rate(fixture::perspectives("alice", img, 3, 3, "T9")).status, 422);
  EXPECT_EQ(svc.rate(fixture::perspectives("nobody", img, 3, 3)).status, 404);
}

TEST(Service, GoldenGatingAtSessionEnd) {
  fixture::TempDir dir("svc");
  SessionService svc(fixture::make_study(dir.path(), 4, 20, 2, 10).config);
  finish_session(svc, "alice", 8);
  EXPECT_EQ(svc.next("alice").status, 200);
  EXPECT_EQ(svc.next("alice").body["session"], 2);
  finish_session(svc, "bob", 7);
  EXPECT_EQ(svc.next("bob").status, 403);
  finish_session(svc, "alice", 10);
  EXPECT_EQ(svc.next("alice").status, 204);
}

TEST(Service, ReplaysLogOnRestart) {
  fixture::TempDir dir("svc");
  const auto setup = fixture::make_study(dir.path(), 4, 4, 2, 2);
  std::string second;
  {
    SessionService svc(setup.config);
    const std::string img = svc.next("alice").body["image_id"];
    svc.rate(fixture::naturalness("alice", img, 3));
    svc.rate(fixture::perspectives("alice", img, 3, 3));
    second = svc.next("alice").body["image_id"];
  }
  SessionService again(setup.config);
  EXPECT_EQ(again.next("alice").body["image_id"], second);
  EXPECT_EQ(again.export_jsonl(), fixture::read_text(dir / "ratings.jsonl"));
}

TEST(Service, AdminEndpoints) {
  fixture::TempDir dir("svc");
  SessionService svc(fixture::make_study(dir.path(), 6, 4, 3, 2, {"alice", "bob"}).config);
  EXPECT_EQ(svc.export_jsonl(), "");
  EXPECT_EQ(svc.agreement()["naturalness"], "insufficient data");
  EXPECT_EQ(svc.register_subject("carol").status, 201);
  EXPECT_EQ(svc.register_subject("carol").status, 409);
  EXPECT_EQ(svc.register_subject("").status, 422);
  EXPECT_EQ(svc.subjects().size(), 3u);
}

TEST(Service, AgreeingSubjectsHaveUnitAlpha) {
  fixture::TempDir dir("svc");
  SessionService svc(fixture::make_study(dir.path(), 6, 4, 6, 2).config);
  std::map<std::string, int> score;
  for (int i = 0; i < 6; ++i) score["c" + std::to_string(i)] = 1 + i % 5;
  for (const char* s : {"alice", "bob"}) {
    while (svc.next(s).status == 200) {
      const std::string img = svc.next(s).body["image_id"];
      const int n = img[0] == 'g' ? 3 : score[img];
      ASSERT_EQ(svc.rate(fixture::naturalness(s, img, n)).status, 200);
      ASSERT_EQ(svc.rate(fixture::perspectives(s, img, n, n)).status, 200);
    }
  }
  const auto a = svc.agreement();
  EXPECT_NEAR(a["naturalness"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(a["technical"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(a["retained_subjects"], 2);
}

class HttpService : public ::testing::Test {
 protected:
  void SetUp() override {
    setup_ = fixture::make_study(dir_.path(), 4, 4, 2, 2);
    svc_ = std::make_unique<SessionService>(setup_.config);
    jina::service::mount(server_, *svc_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  fixture::TempDir dir_{"http"};
  fixture::StudySetup setup_;
  std::unique_ptr<SessionService> svc_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpService, RoutesAndAuth) {
  auto c = client();
  auto r = c.Get("/session/next?subject=alice");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  const auto body = nlohmann::json::parse(r->body);
  const std::string img = body["image_id"];
  EXPECT_EQ(c.Post("/rating", "{not json", "application/json")->status, 422);
  EXPECT_EQ(c.Post("/rating", fixture::perspectives("alice", img, 3, 3).dump(), "application/json")->status, 409);
  EXPECT_EQ(c.Get("/admin/export")->status, 401);
  EXPECT_EQ(c.Get("/admin/export", {{"Authorization", "Bearer wrong"}})->status, 401);
  EXPECT_EQ(c.Get("/admin/export", {{"Authorization", "Bearer secret"}})->status, 200);
  const auto png = c.Get("/image/" + img);
  EXPECT_EQ(png->status, 200);
  EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(c.Get("/image/none")->status, 404);
  EXPECT_EQ(c.Post("/admin/subjects", {{"Authorization", "Bearer secret"}}, R"({"subject_id":"dave"})",
                   "application/json")
                ->status,
            201);
}

}  // namespace
