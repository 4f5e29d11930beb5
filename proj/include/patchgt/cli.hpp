#pragma once

namespace patchgt {
int run_cli(int argc, char** argv);
}
