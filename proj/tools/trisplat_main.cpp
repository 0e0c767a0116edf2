// CLI entry point; subcommands land here as the library modules come online.
int main() { return 0; }
