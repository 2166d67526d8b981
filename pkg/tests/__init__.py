# Tests package for eigen-ui
