# Near-field RSMA – modules package
