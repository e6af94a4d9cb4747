"""Phase angle and Jacobian recovery from magnitude-only grid measurements."""
