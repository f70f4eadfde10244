#include "deepview/app.hpp"

int main(int argc, char** argv) { return deepview::cli_main(argc, argv); }
