// Serves the builtin toy detector over the line-delimited JSON protocol, on stdin/stdout
// or on a TCP port.
#include <cstring>
#include <iostream>
#include <string>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "irpatch/toy_detector.hpp"
#include "irpatch/wire.hpp"

namespace {

std::string answer(const irpatch::ToyDetector& det, const std::string& line) {
    const auto req = irpatch::wire::decode_request(line);
    return irpatch::wire::encode_response(req.id, det.detect(req.image));
}

void serve_stream(const irpatch::ToyDetector& det, std::istream& in, std::ostream& out) {
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        out << answer(det, line) << '\n' << std::flush;
    }
}

int serve_tcp(const irpatch::ToyDetector& det, int port, bool once) {
    const int srv = ::socket(AF_INET, SOCK_STREAM, 0);
    const int one = 1;
    ::setsockopt(srv, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::bind(srv, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(srv, 4) != 0) {
        std::cerr << "toy-peer: cannot listen on port " << port << ": " << std::strerror(errno) << "\n";
        return 1;
    }
    socklen_t len = sizeof addr;
    ::getsockname(srv, reinterpret_cast<sockaddr*>(&addr), &len);
    std::cout << ntohs(addr.sin_port) << std::endl;
    for (;;) {
        const int fd = ::accept(srv, nullptr, nullptr);
        if (fd < 0) continue;
        std::string buf;
        char chunk[65536];
        for (ssize_t n; (n = ::read(fd, chunk, sizeof chunk)) > 0;) {
            buf.append(chunk, static_cast<std::size_t>(n));
            for (auto nl = buf.find('\n'); nl != std::string::npos; nl = buf.find('\n')) {
                const std::string line = buf.substr(0, nl);
                buf.erase(0, nl + 1);
                if (line.empty()) continue;
                const std::string reply = answer(det, line) + "\n";
                if (::send(fd, reply.data(), reply.size(), MSG_NOSIGNAL) < 0) break;
            }
        }
        ::close(fd);
        if (once) break;
    }
    ::close(srv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Toy detector peer for the external detector protocol", "irpatch-toy-peer"};
    int port = -1;
    bool once = false;
    irpatch::ToyTemplateConfig cfg;
    app.add_option("--port", port, "Listen on this loopback TCP port (0 picks one and prints it)");
    app.add_flag("--once", once, "Exit after the first TCP client disconnects");
    app.add_option("--slope", cfg.slope, "Logistic slope");
    app.add_option("--bias", cfg.bias, "Logistic bias");
    app.add_option("--spread-u", cfg.spread_u, "Template spread across, relative to anchor width");
    app.add_option("--spread-v", cfg.spread_v, "Template spread along, relative to anchor height");
    CLI11_PARSE(app, argc, argv);
    try {
        const irpatch::ToyDetector det(cfg, "toy-peer");
        if (port >= 0) return serve_tcp(det, port, once);
        serve_stream(det, std::cin, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "toy-peer: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
