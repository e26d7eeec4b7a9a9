# Services package for the Gaussian scene composition engine
