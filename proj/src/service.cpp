#include "fticir/service.hpp"

#include <chrono>
#include <cstdio>

#include <httplib.h>
#include <json.hpp>

#include "fticir/errors.hpp"

namespace fticir {

namespace {

using nlohmann::json;

ServiceResponse json_response(int status, const json& body) {
    return {status, "application/json", body.dump()};
}

ServiceResponse error_response(int status, std::string_view kind, const std::string& message,
                               const std::string* id = nullptr) {
    json body = {{"error", kind}, {"message", message}};
    if (id != nullptr) body["id"] = *id;
    return json_response(status, body);
}

std::string content_type_for(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    return "image/x-portable-pixmap";
}

int status_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::input:
        case ErrorKind::parse:
        case ErrorKind::shape: return 400;
        case ErrorKind::lookup: return 404;
        default: return 500;
    }
}

void write_response(httplib::Response& res, const ServiceResponse& out) {
    res.status = out.status;
    res.set_content(out.body, out.content_type);
}

}  // namespace

std::string format_score(double score) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", score);
    return buf;
}

ServiceConfig ServiceConfig::from_config(const Config& cfg) {
    ServiceConfig out;
    out.host = cfg.get_string("service.host", out.host);
    out.port = static_cast<int>(cfg.get_int("service.port", out.port));
    out.checkpoint = cfg.get_string("service.checkpoint", "");
    out.index = cfg.get_string("service.index", "");
    out.image_dir = cfg.get_string("service.images", "");
    const long long upload = cfg.get_int("service.max_upload_bytes", static_cast<long long>(out.max_upload_bytes));
    const long long top = cfg.get_int("service.max_top_k", static_cast<long long>(out.max_top_k));
    require(upload > 0, ErrorKind::config, "service.max_upload_bytes must be positive");
    require(top > 0, ErrorKind::config, "service.max_top_k must be positive");
    require(out.port >= 0 && out.port <= 65535, ErrorKind::config, "service.port must be in [0, 65535]");
    out.max_upload_bytes = static_cast<std::size_t>(upload);
    out.max_top_k = static_cast<std::size_t>(top);
    out.cors_origin = cfg.get_string("service.cors_origin", out.cors_origin);
    return out;
}

SearchRequest parse_search_json(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::input, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail(ErrorKind::input, "request body must be a JSON object");
    SearchRequest req;
    if (j.contains("reference_id")) {
        if (!j["reference_id"].is_string()) fail(ErrorKind::input, "reference_id must be a string");
        req.reference_id = j["reference_id"].get<std::string>();
    }
    if (!j.contains("modification") || !j["modification"].is_string()) {
        fail(ErrorKind::input, "modification must be a string");
    }
    req.modification = j["modification"].get<std::string>();
    if (j.contains("top_k")) {
        if (!j["top_k"].is_number_integer() || j["top_k"].get<long long>() < 1) {
            fail(ErrorKind::input, "top_k must be a positive integer");
        }
        req.top_k = static_cast<std::size_t>(j["top_k"].get<long long>());
    }
    return req;
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {}

Service::~Service() { stop(); }

void Service::initialize() {
    require(!config_.checkpoint.empty(), ErrorKind::config, "service.checkpoint is not set");
    require(!config_.index.empty(), ErrorKind::config, "service.index is not set");
    Model model = load_model(config_.checkpoint);
    auto backbone = make_backbone(model.backbone_config());
    model.check_backbone(*backbone);
    RetrievalIndex index = RetrievalIndex::load(config_.index);
    std::optional<std::filesystem::path> dir;
    if (!config_.image_dir.empty()) dir = config_.image_dir;
    initialize(std::move(backbone), std::move(model), std::move(index), dir);
}

void Service::initialize(std::unique_ptr<Backbone> backbone, Model model, RetrievalIndex index,
                         std::optional<std::filesystem::path> image_dir) {
    require(!ready_.load(), ErrorKind::precondition, "service is already initialized");
    require(backbone != nullptr, ErrorKind::input, "backbone is null");
    require(index.backbone == backbone->config().name, ErrorKind::config,
            "index was built with backbone " + index.backbone + ", checkpoint uses " + backbone->config().name);
    backbone_ = std::move(backbone);
    model_.emplace(std::move(model));
    index_.emplace(std::move(index));
    retriever_ = std::make_unique<Retriever>(*backbone_, *model_, *index_, std::move(image_dir));
    config_hash_ = hex64(model_->config().hash());
    ready_.store(true);
}

ServiceResponse Service::search(const SearchRequest& request) const {
    if (!ready()) return error_response(503, "unavailable", "service is not initialized");
    const auto start = std::chrono::steady_clock::now();
    if (request.reference_id.has_value() == request.image_upload.has_value()) {
        return error_response(400, "input", "exactly one of reference_id or image upload is required");
    }
    if (request.modification.find_first_not_of(" \t\r\n") == std::string::npos) {
        return error_response(400, "input", "modification must be non-empty");
    }
    if (request.top_k < 1 || request.top_k > config_.max_top_k) {
        return error_response(400, "input", "top_k must be in [1, " + std::to_string(config_.max_top_k) + "]");
    }
    ComposedQuery q;
    q.modification = request.modification;
    q.top_k = request.top_k;
    if (request.reference_id) {
        const std::string& id = *request.reference_id;
        if (!retriever_->image_path(id)) {
            return error_response(404, "lookup", "unknown reference_id " + id, &id);
        }
        q.reference_id = id;
    } else {
        if (request.image_upload->size() > config_.max_upload_bytes) {
            return error_response(413, "input",
                                  "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
        }
        try {
            q.reference_image = decode_image(*request.image_upload);
        } catch (const Error& e) {
            return error_response(400, to_string(e.kind()), e.what());
        }
    }
    SearchResult result;
    try {
        result = retriever_->search(q);
    } catch (const Error& e) {
        return error_response(status_for(e.kind()), to_string(e.kind()), e.what());
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    json echo = {{"modification", request.modification},
                 {"top_k", request.top_k},
                 {"query_text", result.query_text},
                 {"truncated", result.truncated},
                 {"r", result.r}};
    echo["reference_id"] = request.reference_id ? json(*request.reference_id) : json(nullptr);
    if (!result.warning.empty()) echo["warning"] = result.warning;

    // Scores are written verbatim so the 6-decimal form survives.
    std::string body = "{\"results\":[";
    for (std::size_t i = 0; i < result.hits.size(); ++i) {
        const SearchHit& h = result.hits[i];
        if (i > 0) body += ",";
        body += "{\"id\":" + json(h.id).dump() + ",\"score\":" + format_score(h.score) +
                ",\"image_url\":" + json("/images/" + h.id).dump() + "}";
    }
    char timing[64];
    std::snprintf(timing, sizeof(timing), "%.3f", ms);
    body += "],\"query_echo\":" + echo.dump() + ",\"timing_ms\":" + timing + "}";
    return {200, "application/json", std::move(body)};
}

ServiceResponse Service::image(const std::string& id) const {
    if (!ready()) return error_response(503, "unavailable", "service is not initialized");
    const auto path = index_->find(id) ? retriever_->image_path(id) : std::nullopt;
    if (!path) return error_response(404, "lookup", "unknown image id " + id, &id);
    try {
        const std::vector<std::uint8_t> bytes = read_file_bytes(*path);
        return {200, content_type_for(*path), std::string(bytes.begin(), bytes.end())};
    } catch (const Error& e) {
        return error_response(404, to_string(e.kind()), e.what(), &id);
    }
}

ServiceResponse Service::health() const {
    if (!ready()) return json_response(503, {{"status", "starting"}});
    return json_response(200, {{"status", "ok"},
                               {"index_size", index_->size()},
                               {"backbone", backbone_->config().name},
                               {"config_hash", config_hash_}});
}

void Service::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    httplib::Server& srv = *server_;
    srv.set_payload_max_length(config_.max_upload_bytes + (64u << 10));
    const std::string origin = config_.cors_origin;
    srv.set_default_headers({{"Access-Control-Allow-Origin", origin},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Post("/search", [this](const httplib::Request& req, httplib::Response& res) {
        if (!ready()) return write_response(res, error_response(503, "unavailable", "service is not initialized"));
        SearchRequest sr;
        try {
            if (req.is_multipart_form_data()) {
                if (req.has_file("reference_id")) sr.reference_id = req.get_file_value("reference_id").content;
                if (req.has_file("image")) {
                    const std::string& c = req.get_file_value("image").content;
                    sr.image_upload = std::vector<std::uint8_t>(c.begin(), c.end());
                }
                if (!req.has_file("modification")) fail(ErrorKind::input, "modification is required");
                sr.modification = req.get_file_value("modification").content;
                if (req.has_file("top_k")) {
                    const std::string t = req.get_file_value("top_k").content;
                    std::size_t used = 0;
                    long long v = 0;
                    try {
                        v = std::stoll(t, &used);
                    } catch (const std::exception&) {
                        used = 0;
                    }
                    if (used != t.size() || t.empty() || v < 1) fail(ErrorKind::input, "top_k must be a positive integer");
                    sr.top_k = static_cast<std::size_t>(v);
                }
            } else {
                sr = parse_search_json(req.body);
            }
        } catch (const Error& e) {
            return write_response(res, error_response(400, to_string(e.kind()), e.what()));
        }
        write_response(res, search(sr));
    });
    srv.Get(R"(/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        write_response(res, image(req.matches[1]));
    });
    srv.Get("/health", [this](const httplib::Request&, httplib::Response& res) { write_response(res, health()); });
}

int Service::bind() {
    install_routes();
    int port = config_.port;
    if (port == 0) {
        port = server_->bind_to_any_port(config_.host);
    } else if (!server_->bind_to_port(config_.host, port)) {
        port = -1;
    }
    require(port > 0, ErrorKind::io, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
    return port;
}

void Service::serve_bound() {
    require(server_ != nullptr, ErrorKind::precondition, "bind() must be called before serve_bound()");
    server_->listen_after_bind();
}

void Service::listen(const std::function<void(int)>& on_listening) {
    const int port = bind();
    if (on_listening) on_listening(port);
    serve_bound();
}

void Service::stop() {
    if (server_) server_->stop();
}

}  // namespace fticir
