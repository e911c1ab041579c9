# Tests for dorakit
