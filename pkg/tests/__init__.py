"""DevEnv MCP Tests."""
